"""
Evidence lower bound and gradient-based hyperparameter updates
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.special import digamma, gammaln

from .bigraph import FAMILY1, BipartiteNetwork
from .estep import DyadSet, VariationalState
from .exceptions import ConfigError, NumericalError
from .model import DirichletConcentrations, ModelParams, PriorSpec, compute_concentrations, theta_cells

logger = logging.getLogger("bimmsbm.mstep")

ARMIJO = 1e-4
MAX_HALVINGS = 20

Weights = Union[float, np.ndarray]
BLOCKS = ("b", "gamma", "beta1", "beta2")


@dataclass
class ElboBreakdown:
    """Lower bound and its additive components"""

    total: float
    likelihood_term: float
    dirichlet_term1: float
    dirichlet_term2: float
    prior_term: float
    entropy_term: float

    def components(self) -> Tuple[float, ...]:
        return (self.likelihood_term, self.dirichlet_term1, self.dirichlet_term2, self.prior_term,
                self.entropy_term)


@dataclass
class GradientSet:
    """Gradient blocks shaped like the corresponding ModelParams fields"""

    b: np.ndarray
    gamma: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray

    def is_finite(self) -> bool:
        return all(np.isfinite(getattr(self, name)).all() for name in BLOCKS)

    def scaled(self, b: float = 1.0, gamma: float = 1.0, beta1: float = 1.0, beta2: float = 1.0) -> "GradientSet":
        return GradientSet(self.b * b, self.gamma * gamma, self.beta1 * beta1, self.beta2 * beta2)


def _dyads(net: BipartiteNetwork, dyad_set: Optional[DyadSet]) -> DyadSet:
    if dyad_set is None:
        return net.observed_dyads()
    return np.asarray(dyad_set[0], dtype=np.int64), np.asarray(dyad_set[1], dtype=np.int64)


def _dyad_terms(net: BipartiteNetwork, params: ModelParams, state: VariationalState, rows: np.ndarray,
                cols: np.ndarray):
    phi = state.phi_for(net, rows, cols)
    theta = theta_cells(params, net.d[rows, cols])
    y = net.y[rows, cols].astype(np.float64)
    return phi, theta, y


def _dirichlet_term(alpha: np.ndarray, xi: np.ndarray, counts: np.ndarray, totals: np.ndarray) -> float:
    return float(np.sum(gammaln(xi) - gammaln(xi + totals))
                 + np.sum(gammaln(alpha + counts) - gammaln(alpha)))


def prior_penalty(params: ModelParams, priors: PriorSpec) -> float:
    """Sum of -(v - mu)^2 / (2 sigma^2) over every hyperparameter"""
    mu_b, sigma_b = priors.b_moments(params.k1, params.k2)
    return float(-np.sum((params.b - mu_b) ** 2 / (2.0 * sigma_b ** 2))
                 - np.sum((params.gamma - priors.mu_gamma) ** 2) / (2.0 * priors.sigma_gamma ** 2)
                 - np.sum((params.beta1 - priors.mu_beta1) ** 2) / (2.0 * priors.sigma_beta1 ** 2)
                 - np.sum((params.beta2 - priors.mu_beta2) ** 2) / (2.0 * priors.sigma_beta2 ** 2))


def elbo(net: BipartiteNetwork, params: ModelParams, priors: PriorSpec, conc: DirichletConcentrations,
         state: VariationalState, dyad_set: Optional[DyadSet] = None, weights: Weights = 1.0) -> ElboBreakdown:
    """
    Evaluate the lower bound.

    Dyad terms (likelihood and entropy) run over ``dyad_set`` (default: all
    observed dyads), each multiplied by ``weights``; node terms and the prior
    are always exact. Likelihood and entropy are both expectations under the
    joint (g, h) table of each dyad, the same table the closed-form E-step
    maximizes.

    Raises:
        NumericalError: a component is not finite
    """
    rows, cols = _dyads(net, dyad_set)
    phi, theta, y = _dyad_terms(net, params, state, rows, cols)
    loglik = (y[:, np.newaxis, np.newaxis] * np.log(theta)
              + (1.0 - y)[:, np.newaxis, np.newaxis] * np.log1p(-theta))
    per_dyad = np.sum(phi * loglik, axis=(1, 2))
    positive = np.where(phi > 0, phi, 1.0)
    entropy = -np.sum(phi * np.log(positive), axis=(1, 2))
    likelihood_term = float(np.sum(weights * per_dyad))
    entropy_term = float(np.sum(weights * entropy))

    dirichlet_term1 = _dirichlet_term(conc.alpha1, conc.xi1, state.c1, net.n_observed(1))
    dirichlet_term2 = _dirichlet_term(conc.alpha2, conc.xi2, state.c2, net.n_observed(2))
    prior_term = prior_penalty(params, priors)

    parts = (likelihood_term, dirichlet_term1, dirichlet_term2, prior_term, entropy_term)
    if not np.isfinite(parts).all():
        raise NumericalError(f"non-finite lower bound component: {parts}")
    return ElboBreakdown(total=float(sum(parts)), likelihood_term=likelihood_term,
                         dirichlet_term1=dirichlet_term1, dirichlet_term2=dirichlet_term2,
                         prior_term=prior_term, entropy_term=entropy_term)


def grad_b(net: BipartiteNetwork, params: ModelParams, priors: PriorSpec, state: VariationalState,
           dyad_set: Optional[DyadSet] = None, weights: Weights = 1.0) -> np.ndarray:
    rows, cols = _dyads(net, dyad_set)
    phi, theta, y = _dyad_terms(net, params, state, rows, cols)
    resid = (y[:, np.newaxis, np.newaxis] - theta) * np.reshape(weights, (-1, 1, 1))
    mu_b, sigma_b = priors.b_moments(params.k1, params.k2)
    return np.einsum("ngh,ngh->gh", phi, resid) - (params.b - mu_b) / sigma_b ** 2


def grad_gamma(net: BipartiteNetwork, params: ModelParams, priors: PriorSpec, state: VariationalState,
               dyad_set: Optional[DyadSet] = None, weights: Weights = 1.0) -> np.ndarray:
    prior = (params.gamma - priors.mu_gamma) / priors.sigma_gamma ** 2
    if net.jd == 0:
        return -prior
    rows, cols = _dyads(net, dyad_set)
    phi, theta, y = _dyad_terms(net, params, state, rows, cols)
    resid = np.einsum("ngh,ngh->n", phi, y[:, np.newaxis, np.newaxis] - theta)
    resid = resid * np.broadcast_to(weights, resid.shape)
    return resid @ net.d[rows, cols] - prior


def grad_beta(net: BipartiteNetwork, params: ModelParams, priors: PriorSpec, conc: DirichletConcentrations,
              state: VariationalState, family: int) -> np.ndarray:
    """
    Gradient of the lower bound with respect to one family's monadic coefficients.

    Uses each node's count of observed dyads as the multinomial total, which
    is N2 (family 1) or N1 (family 2) when nothing is held out.
    """
    if family == FAMILY1:
        alpha, xi, counts, cov = conc.alpha1, conc.xi1, state.c1, net.x
        beta, mu, sigma = params.beta1, priors.mu_beta1, priors.sigma_beta1
    else:
        alpha, xi, counts, cov = conc.alpha2, conc.xi2, state.c2, net.w
        beta, mu, sigma = params.beta2, priors.mu_beta2, priors.sigma_beta2
    totals = net.n_observed(family)
    bracket = (digamma(alpha + counts) - digamma(alpha)
               + (digamma(xi) - digamma(xi + totals))[:, np.newaxis])
    return (alpha * bracket).T @ cov - (beta - mu) / sigma ** 2


def gradients(net: BipartiteNetwork, params: ModelParams, priors: PriorSpec, conc: DirichletConcentrations,
              state: VariationalState, dyad_set: Optional[DyadSet] = None, weights: Weights = 1.0) -> GradientSet:
    return GradientSet(
        b=grad_b(net, params, priors, state, dyad_set, weights),
        gamma=grad_gamma(net, params, priors, state, dyad_set, weights),
        beta1=grad_beta(net, params, priors, conc, state, 1),
        beta2=grad_beta(net, params, priors, conc, state, 2),
    )


def mstep_update(params: ModelParams, gradient: GradientSet, step: float) -> ModelParams:
    """
    One ascent step lambda + step * gradient on every block.

    Raises:
        ConfigError: step is not positive
        NumericalError: the update is not finite
    """
    if not step > 0:
        raise ConfigError(f"step must be positive, got {step}")
    updated = ModelParams(params.b + step * gradient.b, params.gamma + step * gradient.gamma,
                          params.beta1 + step * gradient.beta1, params.beta2 + step * gradient.beta2)
    if not updated.is_finite():
        raise NumericalError("non-finite hyperparameter update")
    return updated


def backtracking_ascent(objective: Callable[[np.ndarray], float], x: np.ndarray, value: float,
                        gradient: np.ndarray, direction: np.ndarray, step: float,
                        max_halvings: int = MAX_HALVINGS) -> Tuple[np.ndarray, float, float]:
    """
    Armijo backtracking along ``direction``, halving the step until the
    objective rises by at least ARMIJO * step * <gradient, direction>.

    Returns:
        (x, value, step) at the accepted point, or the inputs with step 0.0
        when no step is accepted
    """
    slope = float(np.sum(gradient * direction))
    if slope <= 0:
        return x, value, 0.0
    for halving in range(max_halvings + 1):
        candidate = x + step * direction
        try:
            new_value = objective(candidate)
        except NumericalError:
            new_value = -np.inf
        if np.isfinite(new_value) and new_value >= value + ARMIJO * step * slope:
            return candidate, new_value, step
        logger.debug(f"Line search halving {halving + 1}: step {step:.3g} rejected")
        step *= 0.5
    return x, value, 0.0


def line_search_mstep(net: BipartiteNetwork, params: ModelParams, priors: PriorSpec,
                      conc: DirichletConcentrations, state: VariationalState, step: float,
                      steps: int = 5) -> Tuple[ModelParams, DirichletConcentrations, float]:
    """
    Block-coordinate backtracking ascent on the full lower bound.

    Each block's gradient is divided by its number of terms (observed dyads
    for B and gamma, nodes for beta) so that one initial step suits every
    block and network size.

    Returns:
        (params, concentrations, lower bound) after ``steps`` rounds
    """
    n_obs = max(1.0, float(net.observed_mask.sum()))
    scale = {"b": n_obs, "gamma": n_obs, "beta1": float(net.n1), "beta2": float(net.n2)}
    params = params.copy()
    value = elbo(net, params, priors, conc, state).total

    def evaluate(name: str, candidate_params: ModelParams) -> Tuple[float, DirichletConcentrations]:
        candidate_conc = compute_concentrations(candidate_params, net) if name.startswith("beta") else conc
        return elbo(net, candidate_params, priors, candidate_conc, state).total, candidate_conc

    for _ in range(steps):
        for name in BLOCKS:
            current = getattr(params, name)
            if current.size == 0:
                continue
            if name == "b":
                gradient = grad_b(net, params, priors, state)
            elif name == "gamma":
                gradient = grad_gamma(net, params, priors, state)
            else:
                gradient = grad_beta(net, params, priors, conc, state, 1 if name == "beta1" else 2)

            def objective(candidate: np.ndarray) -> float:
                trial = params.copy()
                setattr(trial, name, candidate)
                return evaluate(name, trial)[0]

            accepted, value, taken = backtracking_ascent(objective, current, value, gradient,
                                                         gradient / scale[name], step)
            if taken > 0:
                setattr(params, name, accepted)
                if name.startswith("beta"):
                    conc = compute_concentrations(params, net)
    return params, conc, value
