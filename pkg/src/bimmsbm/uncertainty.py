"""
Approximate standard errors for gamma and beta from the curvature of the lower bound
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.special import digamma, expit, polygamma

from .bigraph import FAMILY1, BipartiteNetwork
from .exceptions import ConfigError
from .estep import VariationalState, posterior_mixed_memberships
from .model import DirichletConcentrations, ModelParams, PriorSpec, linear_shift, theta_cells
from .seeding import substream

logger = logging.getLogger("bimmsbm.uncertainty")

JITTER = 1e-8


@dataclass
class SEResult:
    """Standard errors per block; NaN where the block's curvature is unusable"""

    se_gamma: np.ndarray
    se_beta1: np.ndarray
    se_beta2: np.ndarray
    hessian_gamma: np.ndarray
    hessian_beta1: np.ndarray
    hessian_beta2: np.ndarray
    theta_bar: Optional[np.ndarray] = None
    available: Dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready SEs with unavailable entries as null"""
        def plain(values: np.ndarray):
            return np.where(np.isfinite(values), values, None).tolist()

        return {
            "se_gamma": plain(self.se_gamma),
            "se_beta1": plain(self.se_beta1),
            "se_beta2": plain(self.se_beta2),
            "available": dict(self.available),
        }


def _dyad_joint(state: VariationalState, conc: Optional[DirichletConcentrations], rows: np.ndarray,
                cols: np.ndarray) -> np.ndarray:
    """Per-dyad joint memberships; the outer product of the posterior memberships stands in when no table is stored"""
    if state.phi is not None:
        return state.phi[rows, cols]
    if conc is None:
        raise ConfigError("concentrations are needed when no membership table is stored")
    pi_hat, psi_hat = posterior_mixed_memberships(conc, state)
    return pi_hat[rows][:, :, np.newaxis] * psi_hat[cols][:, np.newaxis, :]


def expected_tie_probability(net: BipartiteNetwork, params: ModelParams, state: VariationalState,
                             conc: Optional[DirichletConcentrations] = None) -> np.ndarray:
    """
    Logistic of the membership-weighted linear predictor per dyad.

    Returns:
        N1 x N2 array, NaN at held-out dyads
    """
    rows, cols = net.observed_dyads()
    phi = _dyad_joint(state, conc, rows, cols)
    eta = np.einsum("ngh,gh->n", phi, params.b) + linear_shift(params, net.d[rows, cols])
    theta_bar = np.full((net.n1, net.n2), np.nan)
    theta_bar[rows, cols] = expit(eta)
    return theta_bar


def hessian_gamma(net: BipartiteNetwork, params: ModelParams, priors: PriorSpec, state: VariationalState,
                  conc: Optional[DirichletConcentrations] = None, method: str = "plugin") -> np.ndarray:
    """
    Curvature of the lower bound in gamma.

    Args:
        method: ``plugin`` weights each dyad by theta_bar (1 - theta_bar) with
            theta_bar from :func:`expected_tie_probability`; ``exact`` uses
            sum_gh phi_gh theta_gh (1 - theta_gh), the derivative of the
            gamma gradient

    Returns:
        Symmetric Jd x Jd matrix
    """
    jd = net.jd
    prior = np.eye(jd) / priors.sigma_gamma ** 2
    if jd == 0:
        return -prior
    rows, cols = net.observed_dyads()
    d = net.d[rows, cols]
    if method == "plugin":
        theta_bar = expected_tie_probability(net, params, state, conc)[rows, cols]
        weight = theta_bar * (1.0 - theta_bar)
    elif method == "exact":
        phi = _dyad_joint(state, conc, rows, cols)
        theta = theta_cells(params, d)
        weight = np.einsum("ngh,ngh->n", phi, theta * (1.0 - theta))
    else:
        raise ConfigError(f"unknown method '{method}'")
    hessian = -(d * weight[:, np.newaxis]).T @ d - prior
    return 0.5 * (hessian + hessian.T)


def sample_poisson_binomial(probabilities: np.ndarray, s: int, rng: np.random.Generator) -> np.ndarray:
    """
    ``s`` draws of the number of successes among independent Bernoulli trials.

    Equal probabilities take the binomial shortcut.
    """
    probabilities = np.clip(np.asarray(probabilities, dtype=np.float64), 0.0, 1.0)
    n = len(probabilities)
    if n == 0:
        return np.zeros(s, dtype=np.int64)
    if np.all(probabilities == probabilities[0]):
        return rng.binomial(n, probabilities[0], size=s).astype(np.int64)
    return (rng.random((s, n)) < probabilities).sum(axis=1).astype(np.int64)


def expected_digamma_exact(alpha: float, probabilities: np.ndarray, order: int = 0) -> float:
    """E[polygamma(order, alpha + C)] for Poisson-Binomial C, by convolving the trial distributions"""
    pmf = np.ones(1)
    for p in np.asarray(probabilities, dtype=np.float64):
        pmf = np.convolve(pmf, [1.0 - p, p])
    return float(np.sum(pmf * polygamma(order, alpha + np.arange(len(pmf)))))


def _node_expectations(probs: np.ndarray, alpha: np.ndarray, s: int, rng: Optional[np.random.Generator],
                       method: str) -> Tuple[np.ndarray, np.ndarray]:
    k = len(alpha)
    e_di = np.empty(k)
    e_tri = np.empty(k)
    for g in range(k):
        if method == "exact":
            e_di[g] = expected_digamma_exact(alpha[g], probs[:, g], 0)
            e_tri[g] = expected_digamma_exact(alpha[g], probs[:, g], 1)
        else:
            draws = alpha[g] + sample_poisson_binomial(probs[:, g], s, rng)
            e_di[g] = float(np.mean(digamma(draws)))
            e_tri[g] = float(np.mean(polygamma(1, draws)))
    return e_di, e_tri


def hessian_beta(net: BipartiteNetwork, params: ModelParams, priors: PriorSpec, conc: DirichletConcentrations,
                 state: VariationalState, family: int, s: int = 100, seed: int = 0,
                 method: str = "monte_carlo") -> np.ndarray:
    """
    Curvature of the lower bound in one family's monadic coefficients.

    Expectations of digamma and trigamma at alpha + C are averaged over ``s``
    Poisson-Binomial draws of each node's count, one random substream per
    node, or computed exactly with ``method="exact"``. Rows and columns are
    ordered group-major, matching ``beta.reshape(-1)``.

    Returns:
        Symmetric (K * J) x (K * J) matrix
    """
    if family == FAMILY1:
        alpha, xi, cov, sigma = conc.alpha1, conc.xi1, net.x, priors.sigma_beta1
        n, k = net.n1, params.k1
    else:
        alpha, xi, cov, sigma = conc.alpha2, conc.xi2, net.w, priors.sigma_beta2
        n, k = net.n2, params.k2
    j = cov.shape[1]
    totals = net.n_observed(family)
    mask = net.observed_mask if family == FAMILY1 else net.observed_mask.T
    cross = polygamma(1, xi) - polygamma(1, xi + totals)
    diff = digamma(xi) - digamma(xi + totals)
    curvature = np.zeros((n, k, k))
    posterior = None
    if state.phi is None:
        posterior = posterior_mixed_memberships(conc, state)[0 if family == FAMILY1 else 1]
    for node in range(n):
        partners = np.flatnonzero(mask[node])
        if family == FAMILY1:
            rows, cols = np.full(len(partners), node), partners
        else:
            rows, cols = partners, np.full(len(partners), node)
        if state.phi is None:
            probs = np.repeat(posterior[node][np.newaxis, :], len(partners), axis=0)
        else:
            phi = state.phi[rows, cols]
            probs = phi.sum(axis=2) if family == FAMILY1 else phi.sum(axis=1)
        rng = None if method == "exact" else substream(seed, "se", family, node)
        e_di, e_tri = _node_expectations(probs, alpha[node], s, rng, method)
        a = alpha[node]
        same = (a * (diff[node] + e_di - digamma(a))
                + a ** 2 * (cross[node] + e_tri - polygamma(1, a)))
        block = cross[node] * np.outer(a, a)
        block[np.diag_indices(k)] = same
        curvature[node] = block
    hessian = np.einsum("pgk,pi,pj->gikj", curvature, cov, cov).reshape(k * j, k * j)
    hessian -= np.eye(k * j) / sigma ** 2
    return 0.5 * (hessian + hessian.T)


def block_standard_errors(hessian: np.ndarray, name: str = "block") -> Tuple[np.ndarray, bool]:
    """
    sqrt(diag((-H)^-1)) through a Cholesky factorization of -H.

    A diagonal jitter of 1e-8 * ||H|| is added once if -H is not positive
    definite; a second failure returns NaNs and False.
    """
    size = hessian.shape[0]
    if size == 0:
        return np.zeros(0), True
    negative = -hessian
    for attempt in range(2):
        try:
            factor = linalg.cho_factor(negative, lower=True)
            covariance = linalg.cho_solve(factor, np.eye(size))
            return np.sqrt(np.diag(covariance)), True
        except linalg.LinAlgError:
            if attempt == 0:
                negative = negative + JITTER * np.linalg.norm(hessian) * np.eye(size)
    logger.warning(f"Standard errors unavailable for {name}: negative Hessian is not positive definite")
    return np.full(size, np.nan), False


def standard_errors(h_gamma: np.ndarray, h_beta1: np.ndarray, h_beta2: np.ndarray, beta1_shape: Tuple[int, int],
                    beta2_shape: Tuple[int, int], theta_bar: Optional[np.ndarray] = None) -> SEResult:
    se_gamma, ok_gamma = block_standard_errors(h_gamma, "gamma")
    se_beta1, ok_beta1 = block_standard_errors(h_beta1, "beta1")
    se_beta2, ok_beta2 = block_standard_errors(h_beta2, "beta2")
    return SEResult(se_gamma=se_gamma, se_beta1=se_beta1.reshape(beta1_shape), se_beta2=se_beta2.reshape(beta2_shape),
                    hessian_gamma=h_gamma, hessian_beta1=h_beta1, hessian_beta2=h_beta2, theta_bar=theta_bar,
                    available={"gamma": ok_gamma, "beta1": ok_beta1, "beta2": ok_beta2})


def compute_standard_errors(net: BipartiteNetwork, params: ModelParams, priors: PriorSpec,
                            conc: DirichletConcentrations, state: VariationalState, samples: int = 100,
                            seed: int = 0, memory_cap: float = 1e8) -> Optional[SEResult]:
    """
    Standard errors of every gamma and beta coefficient at a fitted state.

    Returns None (with a warning) when the per-dyad tables would exceed ``memory_cap`` entries.
    """
    entries = float(net.observed_mask.sum()) * params.k1 * params.k2
    if entries > memory_cap:
        logger.warning(f"Standard errors skipped: {entries:.0f} dyad-cell entries exceed the cap of {memory_cap:.0f}")
        return None
    theta_bar = expected_tie_probability(net, params, state, conc)
    result = standard_errors(
        hessian_gamma(net, params, priors, state, conc),
        hessian_beta(net, params, priors, conc, state, 1, samples, seed),
        hessian_beta(net, params, priors, conc, state, 2, samples, seed),
        params.beta1.shape, params.beta2.shape, theta_bar)
    logger.info(f"Standard errors computed (available: {result.available})")
    return result
