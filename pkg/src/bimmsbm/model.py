"""
Model parameters, Gaussian priors, Dirichlet concentrations and tie probabilities
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy.special import expit, gammaln

from .bigraph import BipartiteNetwork
from .exceptions import ConfigError, NetworkValidationError, NumericalError

logger = logging.getLogger("bimmsbm.model")

# Tie probabilities are clamped to [EPS, 1 - EPS] before any logarithm.
EPS = 1e-12

Hyper = Union[float, np.ndarray]


@dataclass
class ModelParams:
    """
    Hyperparameters of the bipartite mixed-membership blockmodel.

    Args:
        b: K1 x K2 blockmodel on the log-odds scale
        gamma: length-Jd dyadic coefficients
        beta1: K1 x J1 monadic coefficients for family 1 (row g is beta_1g)
        beta2: K2 x J2 monadic coefficients for family 2
    """

    b: np.ndarray
    gamma: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray

    def __post_init__(self):
        self.b = np.atleast_2d(np.asarray(self.b, dtype=np.float64))
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=np.float64))
        self.beta1 = np.atleast_2d(np.asarray(self.beta1, dtype=np.float64))
        self.beta2 = np.atleast_2d(np.asarray(self.beta2, dtype=np.float64))
        if self.beta1.shape[0] != self.k1 or self.beta2.shape[0] != self.k2:
            raise ConfigError(f"coefficient rows ({self.beta1.shape[0]}, {self.beta2.shape[0]}) do not match "
                              f"blockmodel shape {self.b.shape}")

    @property
    def k1(self) -> int:
        return self.b.shape[0]

    @property
    def k2(self) -> int:
        return self.b.shape[1]

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in (self.b, self.gamma, self.beta1, self.beta2))

    def copy(self) -> "ModelParams":
        return ModelParams(self.b.copy(), self.gamma.copy(), self.beta1.copy(), self.beta2.copy())

    @classmethod
    def zeros(cls, k1: int, k2: int, j1: int, j2: int, jd: int) -> "ModelParams":
        return cls(np.zeros((k1, k2)), np.zeros(jd), np.zeros((k1, j1)), np.zeros((k2, j2)))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "B": self.b.tolist(),
            "gamma": self.gamma.tolist(),
            "beta1": self.beta1.tolist(),
            "beta2": self.beta2.tolist(),
            "K1": self.k1,
            "K2": self.k2,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelParams":
        try:
            params = cls(np.array(data["B"], dtype=np.float64),
                         np.array(data["gamma"], dtype=np.float64).reshape(-1),
                         np.array(data["beta1"], dtype=np.float64),
                         np.array(data["beta2"], dtype=np.float64))
        except KeyError as e:
            raise ConfigError(f"parameter document is missing key {e}")
        if params.k1 != int(data.get("K1", params.k1)) or params.k2 != int(data.get("K2", params.k2)):
            raise ConfigError("K1/K2 do not match the blockmodel shape")
        return params


@dataclass
class PriorSpec:
    """
    Independent Gaussian priors on every hyperparameter block.

    ``mu_b`` and ``sigma_b`` may be scalars or K1 x K2 per-cell arrays.
    """

    mu_b: Hyper = 0.0
    sigma_b: Hyper = 5.0
    mu_gamma: float = 0.0
    sigma_gamma: float = 5.0
    mu_beta1: float = 0.0
    sigma_beta1: float = 5.0
    mu_beta2: float = 0.0
    sigma_beta2: float = 5.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("sigma_b", "sigma_gamma", "sigma_beta1", "sigma_beta2"):
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(value > 0) or not np.all(np.isfinite(value)):
                raise ConfigError(f"prior {name} must be positive and finite")

    def b_moments(self, k1: int, k2: int) -> Tuple[np.ndarray, np.ndarray]:
        """Per-cell prior mean and SD of the blockmodel"""
        mu = np.broadcast_to(np.asarray(self.mu_b, dtype=np.float64), (k1, k2))
        sigma = np.broadcast_to(np.asarray(self.sigma_b, dtype=np.float64), (k1, k2))
        return mu, sigma

    def to_dict(self) -> Dict[str, Any]:
        def plain(value):
            return np.asarray(value).tolist() if isinstance(value, np.ndarray) else float(value)

        return {name: plain(getattr(self, name)) for name in (
            "mu_b", "sigma_b", "mu_gamma", "sigma_gamma", "mu_beta1", "sigma_beta1", "mu_beta2", "sigma_beta2")}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PriorSpec":
        def parse(value):
            return np.array(value, dtype=np.float64) if isinstance(value, list) else float(value)

        return cls(**{k: parse(v) for k, v in data.items()})


@dataclass
class DirichletConcentrations:
    """alpha = exp(covariates @ beta^T) per node and group, with row sums xi"""

    alpha1: np.ndarray
    xi1: np.ndarray
    alpha2: np.ndarray
    xi2: np.ndarray


@dataclass
class DyadPrediction:
    """K1 x K2 tie probabilities of one dyad"""

    theta: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))


def compute_concentrations(params: ModelParams, net: BipartiteNetwork) -> DirichletConcentrations:
    """
    Dirichlet concentrations of both families.

    Raises:
        NetworkValidationError: covariate columns do not match coefficient lengths
        NumericalError: non-finite concentration (diverging coefficients)
    """
    if params.beta1.shape[1] != net.j1 or params.beta2.shape[1] != net.j2:
        raise NetworkValidationError(
            f"covariate columns ({net.j1}, {net.j2}) do not match coefficient lengths "
            f"({params.beta1.shape[1]}, {params.beta2.shape[1]})")
    with np.errstate(over="ignore"):
        alpha1 = np.exp(net.x @ params.beta1.T)
        alpha2 = np.exp(net.w @ params.beta2.T)
    if not (np.isfinite(alpha1).all() and np.isfinite(alpha2).all()):
        raise NumericalError("non-finite Dirichlet concentration; monadic coefficients are diverging")
    if not ((alpha1 > 0).all() and (alpha2 > 0).all()):
        raise NumericalError("Dirichlet concentration underflowed to zero; monadic coefficients are diverging")
    return DirichletConcentrations(alpha1=alpha1, xi1=alpha1.sum(axis=1), alpha2=alpha2, xi2=alpha2.sum(axis=1))


def clamp(theta: np.ndarray) -> np.ndarray:
    return np.clip(theta, EPS, 1.0 - EPS)


def edge_probability(params: ModelParams, g: int, h: int, d_pq: Optional[np.ndarray] = None) -> float:
    """Tie probability logistic(B_gh + d_pq . gamma), clamped to [1e-12, 1 - 1e-12]"""
    if not (0 <= g < params.k1 and 0 <= h < params.k2):
        raise ConfigError(f"group pair ({g}, {h}) outside a {params.k1} x {params.k2} blockmodel")
    shift = 0.0 if d_pq is None or params.gamma.size == 0 else float(np.dot(d_pq, params.gamma))
    return float(clamp(expit(params.b[g, h] + shift)))


def linear_shift(params: ModelParams, d: np.ndarray) -> np.ndarray:
    """d . gamma over the trailing covariate axis (zeros when Jd = 0)"""
    if d.shape[-1] == 0:
        return np.zeros(d.shape[:-1])
    return np.asarray(d @ params.gamma)


def theta_cells(params: ModelParams, d: np.ndarray) -> np.ndarray:
    """
    Clamped tie probabilities for many dyads at once.

    Args:
        d: dyadic covariates with shape (..., Jd)

    Returns:
        Array with shape (..., K1, K2)
    """
    eta = params.b + linear_shift(params, d)[..., np.newaxis, np.newaxis]
    return clamp(expit(eta))


def predict_dyad(params: ModelParams, d_pq: np.ndarray) -> DyadPrediction:
    return DyadPrediction(theta=theta_cells(params, np.asarray(d_pq, dtype=np.float64)))


def collapsed_log_likelihood(net: BipartiteNetwork, params: ModelParams, z: np.ndarray, u: np.ndarray) -> float:
    """
    Log of the collapsed joint of ties and hard assignments, mixed memberships
    integrated out.

    Args:
        z: N1 x N2 family-1 group indices (0-based)
        u: N1 x N2 family-2 group indices (0-based)

    The Dirichlet-multinomial factors enter once per node and cover the node's
    non-holdout dyads; the Bernoulli factors enter once per non-holdout dyad.
    """
    conc = compute_concentrations(params, net)
    mask = net.observed_mask
    theta = theta_cells(params, net.d)
    rows, cols = np.nonzero(mask)
    cell = theta[rows, cols, z[rows, cols], u[rows, cols]]
    y = net.y[rows, cols]
    bernoulli = float(np.sum(y * np.log(cell) + (1 - y) * np.log1p(-cell)))

    c1 = np.zeros((net.n1, params.k1))
    np.add.at(c1, (rows, z[rows, cols]), 1.0)
    c2 = np.zeros((net.n2, params.k2))
    np.add.at(c2, (cols, u[rows, cols]), 1.0)

    def dirichlet_multinomial(alpha, xi, counts, totals):
        return float(np.sum(gammaln(xi) - gammaln(xi + totals))
                     + np.sum(gammaln(alpha + counts) - gammaln(alpha)))

    return (bernoulli
            + dirichlet_multinomial(conc.alpha1, conc.xi1, c1, net.n_observed(1))
            + dirichlet_multinomial(conc.alpha2, conc.xi2, c2, net.n_observed(2)))


def save_params(path: str, params: ModelParams, priors: PriorSpec, extra: Optional[Dict[str, Any]] = None) -> str:
    """Write parameters (and any extra sections such as standard errors) as JSON"""
    document = params.to_dict()
    document["priors"] = priors.to_dict()
    if extra:
        document.update(extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2)
    logger.debug(f"Parameters saved to {path}")
    return path


def load_params(path: str) -> Tuple[ModelParams, PriorSpec, Dict[str, Any]]:
    """
    Read a parameter document written by :func:`save_params`.

    Returns:
        (params, priors, document) where document is the full parsed JSON
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"parameter file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}")
    priors = PriorSpec.from_dict(document["priors"]) if "priors" in document else PriorSpec()
    return ModelParams.from_dict(document), priors, document
