"""
bimmsbm

Bipartite mixed-membership stochastic blockmodel with node and dyad covariates,
fitted by batch or stochastic variational EM.
"""

try:
    from importlib.metadata import version
    __version__ = version("bimmsbm")
except Exception:
    # Fallback for development/edge cases
    __version__ = "unknown"

__author__ = "Mike Quest"

from .bigraph import BipartiteNetwork, from_arrays, load_network, save_network, split_holdout
from .exceptions import (BiMMSBMError, ConfigError, DivergenceError, EvaluationError, InitializationError,
                         NetworkValidationError, NumericalError)
from .model import ModelParams, PriorSpec
from .svi import FitConfig, FitResult, fit
from .simulate import scenario, simulate_network
from .evaluation import auroc, gof, predict_edges, select_k

__all__ = ["BipartiteNetwork", "from_arrays", "load_network", "save_network", "split_holdout", "BiMMSBMError",
           "ConfigError", "DivergenceError", "EvaluationError", "InitializationError", "NetworkValidationError",
           "NumericalError", "ModelParams", "PriorSpec", "FitConfig", "FitResult", "fit", "scenario",
           "simulate_network", "auroc", "gof", "predict_edges", "select_k"]
