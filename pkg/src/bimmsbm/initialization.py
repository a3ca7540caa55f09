"""
Starting values from single-membership bipartite co-clustering
"""

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy.special import logit

from .bigraph import BipartiteNetwork
from .estep import VariationalState, batch_state
from .exceptions import ConfigError, InitializationError
from .model import ModelParams
from .seeding import substream

logger = logging.getLogger("bimmsbm.initialization")

HARD_WEIGHT = 0.8
MAX_SWEEPS = 100


@dataclass
class InitAssignment:
    """
    Hard co-clustering labels with their soft relaxations.

    Args:
        labels1, labels2: 0-based group labels per node
        row_mix, col_mix: 0.8 on the hard label, the rest spread evenly
        block_probs: smoothed K1 x K2 tie densities of the final blocks
        loglik: penalized complete-data log-likelihood of the chosen restart
        trace: objective after every sweep of the chosen restart
        reseeded: per sweep, whether an empty group had to be refilled
    """

    labels1: np.ndarray
    labels2: np.ndarray
    row_mix: np.ndarray
    col_mix: np.ndarray
    block_probs: np.ndarray
    loglik: float
    trace: List[float] = field(default_factory=list)
    reseeded: List[bool] = field(default_factory=list)


def relax(labels: np.ndarray, k: int) -> np.ndarray:
    """Soft memberships putting HARD_WEIGHT on each label"""
    if k == 1:
        return np.ones((len(labels), 1))
    mix = np.full((len(labels), k), (1.0 - HARD_WEIGHT) / (k - 1))
    mix[np.arange(len(labels)), labels] = HARD_WEIGHT
    return mix


def _onehot(labels: np.ndarray, k: int) -> np.ndarray:
    return np.eye(k)[labels]


def _block_stats(links: np.ndarray, trials: np.ndarray, labels1: np.ndarray, labels2: np.ndarray,
                 k1: int, k2: int) -> Tuple[np.ndarray, np.ndarray]:
    a1, a2 = _onehot(labels1, k1), _onehot(labels2, k2)
    return a1.T @ links @ a2, a1.T @ trials @ a2


def _objective(block_links: np.ndarray, block_trials: np.ndarray, probs: np.ndarray) -> float:
    # Laplace smoothing is the posterior mode under a Beta(2, 2) penalty.
    return float(np.sum((block_links + 1.0) * np.log(probs)
                        + (block_trials - block_links + 1.0) * np.log1p(-probs)))


def _assign(links: np.ndarray, trials: np.ndarray, other_labels: np.ndarray, k_other: int,
            probs: np.ndarray, k: int) -> Tuple[np.ndarray, bool]:
    """Best group per row given the other side's labels, refilling empty groups with the worst-fit row"""
    onehot = _onehot(other_labels, k_other)
    row_links = links @ onehot
    row_trials = trials @ onehot
    scores = row_links @ np.log(probs).T + (row_trials - row_links) @ np.log1p(-probs).T
    labels = np.argmax(scores, axis=1)
    reseeded = False
    for g in range(k):
        if np.any(labels == g):
            continue
        sizes = np.bincount(labels, minlength=k)
        movable = np.flatnonzero(sizes[labels] > 1)
        fit = scores[movable, labels[movable]]
        worst = movable[np.argmin(fit)]
        labels[worst] = g
        reseeded = True
    return labels, reseeded


def _run(links: np.ndarray, trials: np.ndarray, k1: int, k2: int,
         rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray, List[float], List[bool]]:
    n1, n2 = links.shape
    labels1 = np.concatenate([np.arange(k1), rng.integers(k1, size=n1 - k1)])
    labels2 = np.concatenate([np.arange(k2), rng.integers(k2, size=n2 - k2)])
    labels1, labels2 = rng.permutation(labels1), rng.permutation(labels2)
    trace: List[float] = []
    reseeds: List[bool] = []
    for _ in range(MAX_SWEEPS):
        bl, bt = _block_stats(links, trials, labels1, labels2, k1, k2)
        probs = (bl + 1.0) / (bt + 2.0)
        new1, flag1 = _assign(links, trials, labels2, k2, probs, k1)
        bl, bt = _block_stats(links, trials, new1, labels2, k1, k2)
        probs = (bl + 1.0) / (bt + 2.0)
        new2, flag2 = _assign(links.T, trials.T, new1, k1, probs.T, k2)
        bl, bt = _block_stats(links, trials, new1, new2, k1, k2)
        probs = (bl + 1.0) / (bt + 2.0)
        trace.append(_objective(bl, bt, probs))
        reseeds.append(flag1 or flag2)
        converged = np.array_equal(new1, labels1) and np.array_equal(new2, labels2)
        labels1, labels2 = new1, new2
        if converged:
            break
    return labels1, labels2, probs, trace, reseeds


def init_coclustering(net: BipartiteNetwork, k1: int, k2: int, seed: int, restarts: int = 5) -> InitAssignment:
    """
    Classification EM for a Bernoulli latent block model on the observed dyads.

    Alternates hard row assignment, hard column assignment and smoothed
    block-density re-estimation ((links + 1) / (trials + 2)). The best of
    ``restarts`` seeded starts by penalized complete-data log-likelihood is
    kept, ties going to the earlier restart.

    Raises:
        ConfigError: k exceeds the node count or restarts < 1
        InitializationError: k exceeds the number of distinct row (column) patterns
    """
    if not (1 <= k1 <= net.n1 and 1 <= k2 <= net.n2):
        raise ConfigError(f"group counts ({k1}, {k2}) must lie in 1..({net.n1}, {net.n2})")
    if restarts < 1:
        raise ConfigError("restarts must be at least 1")
    trials = net.observed_mask.astype(np.float64)
    links = net.y * trials
    patterns1 = len(np.unique(links, axis=0))
    patterns2 = len(np.unique(links.T, axis=0))
    if k1 > patterns1 or k2 > patterns2:
        raise InitializationError(f"cannot fill ({k1}, {k2}) groups from ({patterns1}, {patterns2}) "
                                  f"distinct tie patterns")

    best = None
    for restart in range(restarts):
        rng = substream(seed, "init", restart)
        labels1, labels2, probs, trace, reseeds = _run(links, trials, k1, k2, rng)
        logger.debug(f"Co-clustering restart {restart}: objective {trace[-1]:.6f} after {len(trace)} sweeps")
        if best is None or trace[-1] > best[3][-1]:
            best = (labels1, labels2, probs, trace, reseeds)
    labels1, labels2, probs, trace, reseeds = best
    return InitAssignment(labels1=labels1, labels2=labels2, row_mix=relax(labels1, k1), col_mix=relax(labels2, k2),
                          block_probs=probs, loglik=trace[-1], trace=trace, reseeded=reseeds)


def seed_variational_state(init: InitAssignment, net: BipartiteNetwork, batch_mode: bool = True) -> VariationalState:
    """
    Variational state from the relaxed co-clustering.

    Batch mode fills the full table with phi[p, q] = row_mix[p] x col_mix[q]
    and recomputes counts; stochastic mode sets the counts those tables would
    produce directly, n_p * row_mix[p], without storing them.
    """
    if batch_mode:
        phi = np.einsum("pg,qh->pqgh", init.row_mix, init.col_mix)
        return batch_state(net, phi)
    deg1 = net.degrees(1, observed_only=True).astype(np.float64)
    deg2 = net.degrees(2, observed_only=True).astype(np.float64)
    return VariationalState(
        c1=net.n_observed(1)[:, np.newaxis] * init.row_mix,
        c2=net.n_observed(2)[:, np.newaxis] * init.col_mix,
        c1_links=deg1[:, np.newaxis] * init.row_mix,
        c2_links=deg2[:, np.newaxis] * init.col_mix,
    )


def warm_start_params(init: InitAssignment, net: BipartiteNetwork) -> ModelParams:
    """
    Hyperparameters matching the co-clustering: B from the smoothed block
    densities, beta intercepts from the mean initial memberships, slopes and
    gamma at zero.
    """
    k1, k2 = init.block_probs.shape
    params = ModelParams.zeros(k1, k2, net.j1, net.j2, net.jd)
    params.b = logit(init.block_probs)
    params.beta1[:, 0] = np.log(init.row_mix.mean(axis=0))
    params.beta2[:, 0] = np.log(init.col_mix.mean(axis=0))
    return params
