"""
Variational state and the closed-form E-step update of the joint dyad memberships
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .bigraph import BipartiteNetwork
from .exceptions import ConfigError, NumericalError
from .model import DirichletConcentrations, ModelParams, theta_cells

logger = logging.getLogger("bimmsbm.estep")

# Upper bound on dyad x cell entries materialized by one vectorized sweep chunk.
CHUNK_ENTRIES = 2_000_000

DyadSet = Tuple[np.ndarray, np.ndarray]


@dataclass
class LatentAssignments:
    """Per-dyad hard group indices (0-based) for both families"""

    z: np.ndarray
    u: np.ndarray

    def validate(self, k1: int, k2: int) -> None:
        if self.z.shape != self.u.shape:
            raise ConfigError("z and u must have the same shape")
        if self.z.size and (self.z.min() < 0 or self.z.max() >= k1):
            raise ConfigError(f"z indices outside 0..{k1 - 1}")
        if self.u.size and (self.u.min() < 0 or self.u.max() >= k2):
            raise ConfigError(f"u indices outside 0..{k2 - 1}")


@dataclass
class VariationalState:
    """
    Per-dyad joint memberships and global expected counts.

    ``c1``/``c2`` are the expected counts C_pg and C_qh. ``c1_links``/``c2_links``
    hold the part of those counts contributed by tie dyads; the non-tie part
    is the difference. In batch mode ``phi`` holds an N1 x N2 x K1 x K2 table;
    in stochastic mode it is None and only the current subsample is cached.
    """

    c1: np.ndarray
    c2: np.ndarray
    c1_links: np.ndarray
    c2_links: np.ndarray
    phi: Optional[np.ndarray] = None
    sub_keys: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    sub_phi: Optional[np.ndarray] = None

    @property
    def k1(self) -> int:
        return self.c1.shape[1]

    @property
    def k2(self) -> int:
        return self.c2.shape[1]

    @property
    def is_batch(self) -> bool:
        return self.phi is not None

    def copy(self) -> "VariationalState":
        return VariationalState(
            c1=self.c1.copy(), c2=self.c2.copy(), c1_links=self.c1_links.copy(), c2_links=self.c2_links.copy(),
            phi=None if self.phi is None else self.phi.copy(), sub_keys=self.sub_keys.copy(),
            sub_phi=None if self.sub_phi is None else self.sub_phi.copy())

    def check(self) -> None:
        """Raise NumericalError on non-finite or negative counts"""
        for name in ("c1", "c2", "c1_links", "c2_links"):
            counts = getattr(self, name)
            if not np.isfinite(counts).all():
                raise NumericalError(f"corrupt variational state: non-finite {name}")
            if (counts < -1e-9).any():
                raise NumericalError(f"corrupt variational state: negative {name}")

    def cache_subsample(self, keys: np.ndarray, phi: np.ndarray) -> None:
        """Remember the joint memberships of the current subsample, keyed by p * N2 + q"""
        order = np.argsort(keys, kind="stable")
        self.sub_keys = keys[order]
        self.sub_phi = phi[order]

    def clear_subsample(self) -> None:
        self.sub_keys = np.zeros(0, dtype=np.int64)
        self.sub_phi = None

    def cached_phi(self, keys: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Look up cached joint memberships.

        Returns:
            (found, phi) where found is a boolean mask over keys and phi holds
            zeros for keys not in the cache
        """
        found = np.zeros(len(keys), dtype=bool)
        phi = np.zeros((len(keys), self.k1, self.k2))
        if self.sub_phi is None or not len(self.sub_keys):
            return found, phi
        pos = np.clip(np.searchsorted(self.sub_keys, keys), 0, len(self.sub_keys) - 1)
        found = self.sub_keys[pos] == keys
        phi[found] = self.sub_phi[pos[found]]
        return found, phi

    def phi_for(self, net: BipartiteNetwork, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """
        Joint memberships of the given dyads from the full table or the
        subsample cache.

        Raises:
            NumericalError: a dyad has no stored memberships
        """
        if self.phi is not None:
            return self.phi[rows, cols]
        found, phi = self.cached_phi(rows.astype(np.int64) * net.n2 + cols)
        if not found.all():
            raise NumericalError("memberships requested for a dyad outside the current subsample")
        return phi


def _own_marginals(net: BipartiteNetwork, state: VariationalState, rows: np.ndarray,
                   cols: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if state.phi is not None:
        own = state.phi[rows, cols]
    else:
        _, own = state.cached_phi(rows.astype(np.int64) * net.n2 + cols)
    return own.sum(axis=2), own.sum(axis=1)


def marginal_counts_excluding(state: VariationalState, p: int, q: int,
                              net: Optional[BipartiteNetwork] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Expected counts of nodes p and q with dyad (p, q) left out, floored at 0.

    In batch mode the dyad's own marginals come from the full table; in
    stochastic mode from the subsample cache when present (``net`` is then
    needed to key the cache).
    """
    if state.phi is not None:
        own = state.phi[p, q]
    elif net is not None:
        _, cached = state.cached_phi(np.array([p * net.n2 + q], dtype=np.int64))
        own = cached[0]
    else:
        own = np.zeros((state.k1, state.k2))
    row = np.maximum(state.c1[p] - own.sum(axis=1), 0.0)
    col = np.maximum(state.c2[q] - own.sum(axis=0), 0.0)
    return row, col


def _log_factors(net: BipartiteNetwork, params: ModelParams, conc: DirichletConcentrations,
                 state: VariationalState, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    own1, own2 = _own_marginals(net, state, rows, cols)
    excl1 = np.maximum(state.c1[rows] - own1, 0.0)
    excl2 = np.maximum(state.c2[cols] - own2, 0.0)
    log1 = np.log(conc.alpha1[rows] + excl1)
    log2 = np.log(conc.alpha2[cols] + excl2)
    theta = theta_cells(params, net.d[rows, cols])
    y = net.y[rows, cols].astype(np.float64)[:, np.newaxis, np.newaxis]
    loglik = y * np.log(theta) + (1.0 - y) * np.log1p(-theta)
    return log1[:, :, np.newaxis] + log2[:, np.newaxis, :] + loglik


def update_phi_block(net: BipartiteNetwork, params: ModelParams, conc: DirichletConcentrations,
                     state: VariationalState, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """
    Update many dyads at once against frozen counts.

    Returns:
        Array of shape (len(rows), K1, K2); the state is not modified

    Raises:
        NumericalError: a dyad's log weights are not finite
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    logits = _log_factors(net, params, conc, state, rows, cols)
    if not np.isfinite(logits).all():
        raise NumericalError("corrupt variational state: non-finite membership weights")
    logits -= logits.max(axis=(1, 2), keepdims=True)
    phi = np.exp(logits)
    phi /= phi.sum(axis=(1, 2), keepdims=True)
    return phi


def update_phi(net: BipartiteNetwork, params: ModelParams, conc: DirichletConcentrations,
               state: VariationalState, p: int, q: int) -> np.ndarray:
    """
    Closed-form update of one dyad's joint memberships.

    phi[g, h] is proportional to (alpha_pg + C'_pg)(alpha_qh + C'_qh)
    theta^y (1 - theta)^(1 - y), normalized over all K1 x K2 cells.

    Raises:
        ConfigError: the dyad is held out
        NumericalError: corrupt state
    """
    if not net.observed_mask[p, q]:
        raise ConfigError(f"dyad ({p}, {q}) is held out")
    return update_phi_block(net, params, conc, state, np.array([p]), np.array([q]))[0]


def restricted_objective(net: BipartiteNetwork, params: ModelParams, conc: DirichletConcentrations,
                         state: VariationalState, p: int, q: int, phi_pq: np.ndarray) -> float:
    """The part of the lower bound that depends on one dyad's memberships, others held fixed"""
    weights = _log_factors(net, params, conc, state, np.array([p]), np.array([q]))[0]
    positive = phi_pq > 0
    entropy = -float(np.sum(phi_pq[positive] * np.log(phi_pq[positive])))
    return float(np.sum(phi_pq * weights)) + entropy


def _row_chunks(net: BipartiteNetwork, k1: int, k2: int):
    step = max(1, CHUNK_ENTRIES // max(1, net.n2 * k1 * k2))
    for start in range(0, net.n1, step):
        yield start, min(net.n1, start + step)


def full_sweep(net: BipartiteNetwork, params: ModelParams, conc: DirichletConcentrations,
               state: VariationalState) -> np.ndarray:
    """
    Jacobi E-step: update every observed dyad against the same frozen counts.

    Returns:
        A new N1 x N2 x K1 x K2 table; held-out dyads keep their old values
    """
    if state.phi is None:
        raise ConfigError("a full sweep needs the batch membership table")
    new_phi = state.phi.copy()
    mask = net.observed_mask
    for start, stop in _row_chunks(net, state.k1, state.k2):
        rows, cols = np.nonzero(mask[start:stop])
        rows = rows + start
        if len(rows):
            new_phi[rows, cols] = update_phi_block(net, params, conc, state, rows, cols)
    return new_phi


def recompute_global_counts(state: VariationalState, net: BipartiteNetwork,
                            dyad_set: Optional[DyadSet] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rebuild the expected counts from the full membership table.

    Sums run over ``dyad_set`` (default: every observed dyad) in a fixed
    order. The state's counts are replaced and returned.
    """
    if state.phi is None:
        raise ConfigError("global counts can only be recomputed from the batch membership table")
    if dyad_set is None:
        weights = net.observed_mask.astype(np.float64)
    else:
        weights = np.zeros((net.n1, net.n2))
        np.add.at(weights, (np.asarray(dyad_set[0]), np.asarray(dyad_set[1])), 1.0)
        weights = np.minimum(weights, 1.0)
    links = weights * net.y
    marg1 = state.phi.sum(axis=3)
    marg2 = state.phi.sum(axis=2)
    state.c1 = np.einsum("pq,pqg->pg", weights, marg1)
    state.c2 = np.einsum("pq,pqh->qh", weights, marg2)
    state.c1_links = np.einsum("pq,pqg->pg", links, marg1)
    state.c2_links = np.einsum("pq,pqh->qh", links, marg2)
    return state.c1, state.c2


def batch_state(net: BipartiteNetwork, phi: np.ndarray) -> VariationalState:
    """A batch state holding ``phi`` with counts computed from it"""
    k1, k2 = phi.shape[2], phi.shape[3]
    state = VariationalState(c1=np.zeros((net.n1, k1)), c2=np.zeros((net.n2, k2)),
                             c1_links=np.zeros((net.n1, k1)), c2_links=np.zeros((net.n2, k2)), phi=phi)
    recompute_global_counts(state, net)
    return state


def posterior_mixed_memberships(conc: DirichletConcentrations,
                                state: VariationalState) -> Tuple[np.ndarray, np.ndarray]:
    """
    Posterior mean mixed memberships (C + alpha) / (n + xi).

    The expected counts of a node always sum to its number of observed
    dyads n, so each row is normalized by its own total.
    """
    pi_hat = state.c1 + conc.alpha1
    psi_hat = state.c2 + conc.alpha2
    pi_hat = pi_hat / pi_hat.sum(axis=1, keepdims=True)
    psi_hat = psi_hat / psi_hat.sum(axis=1, keepdims=True)
    return pi_hat, psi_hat
