"""
Networks drawn from the generative model, including the calibration scenarios
"""

import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy.special import expit, logit, logsumexp

from .bigraph import BipartiteNetwork, from_arrays
from .exceptions import ConfigError
from .model import ModelParams, clamp, linear_shift
from .seeding import substream

logger = logging.getLogger("bimmsbm.simulate")

SIZES = {"small": (100, 200), "large": (1000, 2000)}

# Blockmodel probabilities and monadic coefficients (rows: intercept, slope;
# columns: groups), shared by both families.
SCENARIOS = {
    "easy": ([[0.85, 0.01], [0.01, 0.99]], [[-4.5, -4.5], [0.0, 0.0]]),
    "medium": ([[0.65, 0.35], [0.20, 0.75]], [[0.05, 0.75], [-0.75, -1.0]]),
    "hard": ([[0.65, 0.40], [0.50, 0.45]], [[0.0, 0.0], [-0.75, -1.0]]),
}

PREDICTOR_SD = 1.5


@dataclass
class ScenarioSpec:
    """One calibration scenario: probabilities, coefficients and network size"""

    name: str
    blockmodel_probs: np.ndarray
    monadic_coefs: np.ndarray
    n1: int
    n2: int
    predictor_sd: float = PREDICTOR_SD

    def __post_init__(self):
        self.blockmodel_probs = np.asarray(self.blockmodel_probs, dtype=np.float64)
        self.monadic_coefs = np.asarray(self.monadic_coefs, dtype=np.float64)
        if not ((self.blockmodel_probs > 0) & (self.blockmodel_probs < 1)).all():
            raise ConfigError("scenario blockmodel probabilities must lie in (0, 1)")

    def to_params(self) -> ModelParams:
        """Log-odds blockmodel, coefficients per group, one dyadic coefficient at zero"""
        coefs = self.monadic_coefs.T
        return ModelParams(b=logit(self.blockmodel_probs), gamma=np.zeros(1), beta1=coefs.copy(),
                           beta2=coefs.copy())


@dataclass
class SimulationTruth:
    """Latent quantities retained from a simulation"""

    pi: np.ndarray
    psi: np.ndarray
    z: np.ndarray
    u: np.ndarray
    params: ModelParams

    def to_dict(self) -> Dict[str, Any]:
        return {"pi": self.pi.tolist(), "psi": self.psi.tolist(), "z": self.z.tolist(), "u": self.u.tolist(),
                "params": self.params.to_dict()}


def scenario(name: str, size: str = "small") -> ScenarioSpec:
    """
    Look up a calibration scenario.

    Raises:
        ConfigError: unknown name or size
    """
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario '{name}' (expected one of {sorted(SCENARIOS)})")
    if size not in SIZES:
        raise ConfigError(f"unknown size '{size}' (expected one of {sorted(SIZES)})")
    probs, coefs = SCENARIOS[name]
    n1, n2 = SIZES[size]
    return ScenarioSpec(name=name, blockmodel_probs=np.array(probs), monadic_coefs=np.array(coefs), n1=n1, n2=n2)


def sample_dirichlet_rows(alpha: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    One Dirichlet draw per row, stable for tiny concentrations.

    log G(a) = log G(a + 1) + log(U) / a for gamma variates G, then normalize in log space.
    """
    log_gamma = np.log(rng.standard_gamma(alpha + 1.0)) + np.log(rng.random(alpha.shape)) / alpha
    return np.exp(log_gamma - logsumexp(log_gamma, axis=1, keepdims=True))


def sample_categorical(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF draws: probs is (n, K), uniforms is (n, m); returns (n, m) indices"""
    cumulative = np.cumsum(probs, axis=1)
    draws = (uniforms[:, :, np.newaxis] > cumulative[:, np.newaxis, :]).sum(axis=2)
    return np.minimum(draws, probs.shape[1] - 1)


def _covariates(n: int, j: int, rng: np.random.Generator, sd: float) -> np.ndarray:
    return np.column_stack([np.ones(n), rng.normal(0.0, sd, size=(n, j - 1))])


def simulate_network(source: Union[ModelParams, ScenarioSpec], n1: Optional[int] = None, n2: Optional[int] = None,
                     seed: int = 0, x: Optional[np.ndarray] = None, w: Optional[np.ndarray] = None,
                     d: Optional[np.ndarray] = None, pi: Optional[np.ndarray] = None,
                     psi: Optional[np.ndarray] = None, rng: Optional[np.random.Generator] = None,
                     ids1=None, ids2=None) -> Tuple[BipartiteNetwork, SimulationTruth]:
    """
    Draw a network from the generative model.

    Memberships pi_p ~ Dirichlet(alpha_p), psi_q ~ Dirichlet(alpha_q); per
    dyad z ~ Categorical(pi_p), u ~ Categorical(psi_q) and y ~ Bernoulli(theta).

    Args:
        source: hyperparameters, or a scenario (probabilities converted to log-odds)
        n1, n2: node counts (default: the scenario's, or the covariate rows)
        seed: root seed of the ``simulate`` substream
        x, w, d: covariates with intercept columns; drawn when omitted
            (monadic predictors sd 1.5, dyadic predictors standard normal)
        pi, psi: fixed memberships that replace the Dirichlet draws
        rng: generator to use instead of the seeded substream

    Returns:
        (network, truth)
    """
    if isinstance(source, ScenarioSpec):
        params = source.to_params()
        n1 = n1 or source.n1
        n2 = n2 or source.n2
        sd = source.predictor_sd
    else:
        params = source
        sd = PREDICTOR_SD
    n1 = n1 if n1 is not None else (len(x) if x is not None else None)
    n2 = n2 if n2 is not None else (len(w) if w is not None else None)
    if n1 is None or n2 is None:
        raise ConfigError("node counts are required when simulating from parameters without covariates")
    rng = rng or substream(seed, "simulate")

    x = _covariates(n1, params.beta1.shape[1], rng, sd) if x is None else np.asarray(x, dtype=np.float64)
    w = _covariates(n2, params.beta2.shape[1], rng, sd) if w is None else np.asarray(w, dtype=np.float64)
    if d is None:
        d = rng.normal(0.0, 1.0, size=(n1, n2, params.gamma.size))
    d = np.asarray(d, dtype=np.float64)
    if x.shape != (n1, params.beta1.shape[1]) or w.shape != (n2, params.beta2.shape[1]) \
            or d.shape != (n1, n2, params.gamma.size):
        raise ConfigError("covariate shapes do not match the parameters and node counts")

    if pi is None:
        pi = sample_dirichlet_rows(np.exp(x @ params.beta1.T), rng)
    if psi is None:
        psi = sample_dirichlet_rows(np.exp(w @ params.beta2.T), rng)
    z = sample_categorical(pi, rng.random((n1, n2)))
    u = sample_categorical(psi, rng.random((n2, n1))).T
    theta = clamp(expit(params.b[z, u] + linear_shift(params, d)))
    y = (rng.random((n1, n2)) < theta).astype(np.int8)

    net = from_arrays(y, x=x, w=w, d=d, ids1=ids1, ids2=ids2, add_intercept=False)
    logger.debug(f"Simulated {n1} x {n2} network with density {net.density:.4f}")
    return net, SimulationTruth(pi=pi, psi=psi, z=z, u=u, params=params)


def save_truth(path: str, truth: SimulationTruth) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(truth.to_dict(), f)
    return path


def load_truth(path: str) -> SimulationTruth:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"truth file not found: {path}")
    return SimulationTruth(pi=np.array(data["pi"]), psi=np.array(data["psi"]), z=np.array(data["z"], dtype=np.int64),
                           u=np.array(data["u"], dtype=np.int64), params=ModelParams.from_dict(data["params"]))
