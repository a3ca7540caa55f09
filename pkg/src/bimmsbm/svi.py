"""
Stochastic variational EM driver with a batch variational EM fallback
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .bigraph import FAMILY1, FAMILY2, BipartiteNetwork
from .estep import (DyadSet, VariationalState, batch_state, full_sweep, posterior_mixed_memberships,
                    update_phi_block)
from .exceptions import ConfigError, DivergenceError, NumericalError
from .initialization import InitAssignment, init_coclustering, seed_variational_state, warm_start_params
from .model import DirichletConcentrations, ModelParams, PriorSpec, compute_concentrations
from .mstep import MAX_HALVINGS, elbo, gradients, line_search_mstep, mstep_update
from .seeding import substream
from .uncertainty import compute_standard_errors

logger = logging.getLogger("bimmsbm.svi")

MONITOR_DYADS = 2000


@dataclass
class FitConfig:
    """
    Optimizer settings.

    Args:
        k1, k2: latent group counts
        tau: step-size delay (> 0)
        kappa: forgetting rate in (0.5, 1]
        m_sets: number of non-tie sets per node
        max_iter: iteration cap
        conv_tol: relative change of the smoothed lower bound that stops the fit
        elbo_window: iterations averaged for the convergence check (stochastic mode)
        seed: root seed for every random substream
        batch_mode: full sweeps and line-searched M-steps instead of subsampling
        se_samples: Poisson-Binomial draws per node for standard errors
        learn_rate: damping of the stochastic hyperparameter step
        batch_step: initial line-search step in batch mode
        mstep_steps: line-searched rounds per batch M-step
        restarts: co-clustering restarts
        memory_cap: largest N1 * N2 * K1 * K2 stored in batch mode
        local_passes: E-step passes over each subsample
        compute_se: produce standard errors after fitting
        threads: worker cap for model selection
    """

    k1: int = 2
    k2: int = 2
    tau: float = 1.0
    kappa: float = 0.75
    m_sets: int = 10
    max_iter: int = 2000
    conv_tol: float = 1e-5
    elbo_window: int = 20
    seed: int = 0
    batch_mode: bool = False
    se_samples: int = 100
    learn_rate: float = 0.1
    batch_step: float = 16.0
    mstep_steps: int = 5
    restarts: int = 5
    memory_cap: float = 1e8
    local_passes: int = 2
    compute_se: bool = True
    threads: int = 1

    def validate(self) -> None:
        """Raise ConfigError on any out-of-range setting"""
        if self.k1 < 1 or self.k2 < 1:
            raise ConfigError("k1 and k2 must be at least 1")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0.5 < self.kappa <= 1.0:
            raise ConfigError(f"kappa must lie in (0.5, 1], got {self.kappa}")
        if self.m_sets < 1:
            raise ConfigError("m_sets must be at least 1")
        if self.max_iter < 0:
            raise ConfigError("max_iter must be non-negative")
        if self.conv_tol < 0:
            raise ConfigError("conv_tol must be non-negative")
        if self.elbo_window < 1 or self.local_passes < 1 or self.mstep_steps < 1 or self.restarts < 1:
            raise ConfigError("elbo_window, local_passes, mstep_steps and restarts must be at least 1")
        if self.se_samples < 1:
            raise ConfigError("se_samples must be at least 1")
        if not (self.learn_rate > 0 and self.batch_step > 0):
            raise ConfigError("learn_rate and batch_step must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class Subnetwork:
    """
    One sampled stratum of a focal node's dyads.

    ``rows``/``cols`` may repeat dyads (non-tie sets are drawn with
    replacement). ``stratum_size`` is the number of observed dyads of the
    focal node in the chosen stratum; the focal family's weight scales a
    subsample sum up to that stratum.
    """

    focal_node: int
    family: int
    node: int
    rows: np.ndarray
    cols: np.ndarray
    is_link_set: bool
    weight1: float
    weight2: float
    stratum_size: int

    @property
    def is_empty(self) -> bool:
        return len(self.rows) == 0

    def dyad_weights(self, n_nodes: int, m_sets: int) -> float:
        """
        Per-dyad multiplier that makes subsample sums unbiased for sums over
        all observed dyads.
        """
        weight = self.weight1 if self.family == FAMILY1 else self.weight2
        selection = (m_sets + 1.0) if self.is_link_set else (m_sets + 1.0) / m_sets
        return 0.5 * n_nodes * selection * weight


@dataclass
class CountEstimate:
    """Intermediate expected counts of one stratum of the focal node"""

    family: int
    node: int
    is_link_set: bool
    counts: np.ndarray


@dataclass
class FitResult:
    """Fitted hyperparameters, memberships and optimizer history"""

    params: ModelParams
    pi_hat: np.ndarray
    psi_hat: np.ndarray
    c1: Optional[np.ndarray] = None
    c2: Optional[np.ndarray] = None
    elbo_trace: List[float] = field(default_factory=list)
    se: Optional[Any] = None
    iterations: int = 0
    converged: bool = False
    state: Optional[VariationalState] = None
    priors: PriorSpec = field(default_factory=PriorSpec)


def step_size(t: float, tau: float, kappa: float) -> float:
    """
    Robbins-Monro step (tau + t)^(-kappa).

    Raises:
        ConfigError: the step falls outside (0, 1]
    """
    rho = (tau + t) ** (-kappa)
    if not 0.0 < rho <= 1.0:
        raise ConfigError(f"step size {rho} outside (0, 1] for tau={tau}, t={t}, kappa={kappa}")
    return rho


def sample_subnetwork(net: BipartiteNetwork, rng: np.random.Generator, m_sets: int = 10) -> Subnetwork:
    """
    Draw a focal node uniformly from both families, then either all its
    observed ties (probability 1 / (M + 1)) or ceil(n0 / M) of its n0
    observed non-ties, uniformly with replacement.
    """
    n_nodes = net.n1 + net.n2
    if n_nodes == 0:
        raise ConfigError("cannot sample from an empty network")
    focal = int(rng.integers(n_nodes))
    family = FAMILY1 if focal < net.n1 else FAMILY2
    node = focal if family == FAMILY1 else focal - net.n1
    if family == FAMILY1:
        observed = net.observed_mask[node]
        ties = net.y[node].astype(bool)
    else:
        observed = net.observed_mask[:, node]
        ties = net.y[:, node].astype(bool)
    links = np.flatnonzero(observed & ties)
    nonlinks = np.flatnonzero(observed & ~ties)

    if rng.random() < 1.0 / (m_sets + 1):
        partners, is_link_set, weight, size = links, True, 1.0, len(links)
    else:
        size = len(nonlinks)
        draws = math.ceil(size / m_sets)
        partners = rng.choice(nonlinks, size=draws, replace=True) if draws else nonlinks
        is_link_set = False
        weight = size / draws if draws else 1.0
    fixed = np.full(len(partners), node, dtype=np.int64)
    partners = np.asarray(partners, dtype=np.int64)
    rows, cols = (fixed, partners) if family == FAMILY1 else (partners, fixed)
    return Subnetwork(focal_node=focal, family=family, node=node, rows=rows, cols=cols, is_link_set=is_link_set,
                      weight1=weight if family == FAMILY1 else 1.0, weight2=weight if family == FAMILY2 else 1.0,
                      stratum_size=size)


def intermediate_counts(subnet: Subnetwork, state: VariationalState, net: BipartiteNetwork) -> CountEstimate:
    """
    Rescaled focal-node counts from the subsample's cached memberships.

    The sum of the focal family's marginals over the subsample (repeats
    included) is multiplied by stratum size / subsample size.
    """
    phi = state.phi_for(net, subnet.rows, subnet.cols)
    axis = 2 if subnet.family == FAMILY1 else 1
    weight = subnet.weight1 if subnet.family == FAMILY1 else subnet.weight2
    counts = weight * phi.sum(axis=axis).sum(axis=0)
    return CountEstimate(family=subnet.family, node=subnet.node, is_link_set=subnet.is_link_set, counts=counts)


def online_count_update(c_prev: np.ndarray, c_hat: np.ndarray, t: float, tau: float, kappa: float) -> np.ndarray:
    """C_t = (1 - rho) C_{t-1} + rho C_hat with rho = (tau + t)^(-kappa)"""
    rho = step_size(t, tau, kappa)
    return (1.0 - rho) * c_prev + rho * c_hat


def apply_count_estimate(state: VariationalState, estimate: CountEstimate, t: float, tau: float,
                         kappa: float) -> None:
    """Blend one stratum of the focal node's counts and refresh its total"""
    if estimate.family == FAMILY1:
        totals, links = state.c1, state.c1_links
    else:
        totals, links = state.c2, state.c2_links
    p = estimate.node
    nonlinks = np.maximum(totals[p] - links[p], 0.0)
    if estimate.is_link_set:
        links[p] = np.maximum(online_count_update(links[p], estimate.counts, t, tau, kappa), 0.0)
    else:
        nonlinks = np.maximum(online_count_update(nonlinks, estimate.counts, t, tau, kappa), 0.0)
    totals[p] = links[p] + nonlinks


def _initial_state(net: BipartiteNetwork, config: FitConfig, init_params: Optional[ModelParams]):
    if init_params is not None:
        if init_params.k1 != config.k1 or init_params.k2 != config.k2:
            raise ConfigError("initial parameters do not match k1/k2")
        conc = compute_concentrations(init_params, net)
        row_mix = conc.alpha1 / conc.xi1[:, np.newaxis]
        col_mix = conc.alpha2 / conc.xi2[:, np.newaxis]
        init = InitAssignment(labels1=row_mix.argmax(axis=1), labels2=col_mix.argmax(axis=1), row_mix=row_mix,
                              col_mix=col_mix, block_probs=np.full((config.k1, config.k2), 0.5), loglik=float("nan"))
        params = init_params.copy()
    else:
        init = init_coclustering(net, config.k1, config.k2, config.seed, config.restarts)
        params = warm_start_params(init, net)
        logger.debug(f"Co-clustering objective {init.loglik:.4f}")
    state = seed_variational_state(init, net, batch_mode=config.batch_mode)
    return params, state


def _accept_sweep(net: BipartiteNetwork, params: ModelParams, priors: PriorSpec, conc: DirichletConcentrations,
                  state: VariationalState, new_phi: np.ndarray, current: float):
    """Keep a Jacobi sweep only if the lower bound does not drop, damping it if needed"""
    shrink = 1.0
    for attempt in range(MAX_HALVINGS + 1):
        phi = new_phi if attempt == 0 else state.phi + shrink * (new_phi - state.phi)
        candidate = batch_state(net, phi)
        value = elbo(net, params, priors, conc, candidate).total
        if value >= current:
            if attempt:
                logger.debug(f"E-step accepted with damping {shrink:.3g}")
            return candidate, value
        shrink *= 0.5
    logger.debug("E-step sweep rejected")
    return state, current


def monitor_dyads(net: BipartiteNetwork, seed: int, size: int = MONITOR_DYADS) -> DyadSet:
    """Fixed sample of at most ``size`` observed dyads on which the stochastic lower bound is tracked"""
    rows, cols = net.observed_dyads()
    if len(rows) > size:
        pick = np.sort(substream(seed, "monitor").choice(len(rows), size=size, replace=False))
        rows, cols = rows[pick], cols[pick]
    return rows, cols


def monitored_elbo(net: BipartiteNetwork, params: ModelParams, priors: PriorSpec, conc: DirichletConcentrations,
                   state: VariationalState, dyads: DyadSet) -> float:
    """
    Lower bound with the dyad terms estimated on a fixed dyad sample.

    Memberships of the sampled dyads are recomputed against the current
    counts and their terms reweighted to all observed dyads. Node terms and
    the prior are exact. Unlike the bound on the current subsample, this is a
    deterministic function of the counts and hyperparameters.
    """
    rows, cols = dyads
    tracker = VariationalState(c1=state.c1, c2=state.c2, c1_links=state.c1_links, c2_links=state.c2_links)
    tracker.cache_subsample(rows * net.n2 + cols, update_phi_block(net, params, conc, tracker, rows, cols))
    weight = float(net.observed_mask.sum()) / len(rows)
    return elbo(net, params, priors, conc, tracker, dyads, weight).total


def _smoothed_change(trace: List[float], window: int) -> Optional[float]:
    if len(trace) < 2 * window:
        return None
    recent = float(np.mean(trace[-window:]))
    previous = float(np.mean(trace[-2 * window:-window]))
    return abs(recent - previous) / max(abs(previous), 1e-300)


def _fit_batch(net, config, priors, params, state, trace):
    conc = compute_concentrations(params, net)
    current = elbo(net, params, priors, conc, state).total
    converged = False
    iteration = 0
    for iteration in range(1, config.max_iter + 1):
        try:
            state, current = _accept_sweep(net, params, priors, conc, state, full_sweep(net, params, conc, state),
                                           current)
            params, conc, current = line_search_mstep(net, params, priors, conc, state, config.batch_step,
                                                      config.mstep_steps)
        except NumericalError as e:
            raise DivergenceError(f"fit diverged: {e}", iteration)
        if not np.isfinite(current):
            raise DivergenceError("fit diverged: non-finite lower bound", iteration)
        trace.append(current)
        logger.debug(f"Iteration {iteration}: lower bound {current:.6f}")
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < config.conv_tol * abs(trace[-2]):
            converged = True
            break
    return params, state, conc, iteration, converged


def _fit_stochastic(net, config, priors, params, state, trace):
    conc = compute_concentrations(params, net)
    rng = substream(config.seed, "svi")
    n_nodes = net.n1 + net.n2
    n_obs = float(net.observed_mask.sum())
    visits = np.zeros(n_nodes)
    tracked = monitor_dyads(net, config.seed)
    converged = False
    iteration = 0
    for iteration in range(1, config.max_iter + 1):
        subnet = sample_subnetwork(net, rng, config.m_sets)
        while subnet.is_empty:
            logger.debug(f"Empty subsample at node {subnet.focal_node}; resampling")
            subnet = sample_subnetwork(net, rng, config.m_sets)
        try:
            keys = np.unique(subnet.rows * net.n2 + subnet.cols)
            rows, cols = np.divmod(keys, net.n2)
            state.clear_subsample()
            for _ in range(config.local_passes):
                state.cache_subsample(keys, update_phi_block(net, params, conc, state, rows, cols))

            visits[subnet.focal_node] += 1
            apply_count_estimate(state, intermediate_counts(subnet, state, net), visits[subnet.focal_node],
                                 config.tau, config.kappa)

            weight = subnet.dyad_weights(n_nodes, config.m_sets)
            dyads = (subnet.rows, subnet.cols)
            noisy = gradients(net, params, priors, conc, state, dyads, weight)
            noisy = noisy.scaled(b=1.0 / n_obs, gamma=1.0 / n_obs, beta1=1.0 / net.n1, beta2=1.0 / net.n2)
            params = mstep_update(params, noisy, config.learn_rate * step_size(iteration, config.tau, config.kappa))
            conc = compute_concentrations(params, net)
            value = monitored_elbo(net, params, priors, conc, state, tracked)
        except NumericalError as e:
            raise DivergenceError(f"fit diverged: {e}", iteration)
        trace.append(value)
        if iteration % 100 == 0:
            logger.debug(f"Iteration {iteration}: monitored lower bound {value:.6f}")
        change = _smoothed_change(trace, config.elbo_window)
        if change is not None and change < config.conv_tol:
            converged = True
            break
    state.clear_subsample()
    return params, state, conc, iteration, converged


def fit(net: BipartiteNetwork, config: FitConfig, priors: Optional[PriorSpec] = None,
        init_params: Optional[ModelParams] = None, debug: bool = False) -> FitResult:
    """
    Fit the model by stochastic (default) or batch variational EM.

    Args:
        net: network to fit; held-out dyads are ignored
        config: optimizer settings
        priors: Gaussian priors (defaults mu=0, sigma=5)
        init_params: start from these hyperparameters instead of co-clustering
        debug: log every iteration

    Returns:
        FitResult with standard errors when ``config.compute_se`` is set

    Raises:
        ConfigError: invalid settings or a batch fit beyond the memory cap
        DivergenceError: the lower bound or an update became non-finite
    """
    if debug:
        logging.basicConfig(level=logging.DEBUG, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
        logging.getLogger("bimmsbm").setLevel(logging.DEBUG)
    config.validate()
    priors = priors or PriorSpec()
    if not net.observed_mask.any():
        raise ConfigError("network has no observed dyads")
    if config.batch_mode and net.n1 * net.n2 * config.k1 * config.k2 > config.memory_cap:
        raise ConfigError(f"batch mode would store {net.n1 * net.n2 * config.k1 * config.k2} membership entries, "
                          f"above the cap of {config.memory_cap:.0f}; use stochastic mode")

    mode = "batch" if config.batch_mode else "stochastic"
    logger.info(f"Fitting K=({config.k1}, {config.k2}) on {net.n1} x {net.n2} network ({mode} mode, "
                f"seed {config.seed})")
    params, state = _initial_state(net, config, init_params)
    trace: List[float] = []
    runner = _fit_batch if config.batch_mode else _fit_stochastic
    params, state, conc, iterations, converged = runner(net, config, priors, params, state, trace)
    pi_hat, psi_hat = posterior_mixed_memberships(conc, state)
    logger.info(f"Fit finished after {iterations} iterations (converged={converged})")

    result = FitResult(params=params, pi_hat=pi_hat, psi_hat=psi_hat, c1=state.c1.copy(), c2=state.c2.copy(),
                       elbo_trace=trace, iterations=iterations, converged=converged, state=state, priors=priors)
    if config.compute_se and iterations > 0:
        result.se = compute_standard_errors(net, params, priors, conc, state, config.se_samples, config.seed,
                                            config.memory_cap)
    return result
