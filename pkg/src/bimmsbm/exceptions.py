"""
Custom exceptions for the bimmsbm estimation engine
"""

from typing import Optional


class BiMMSBMError(Exception):
    """Base exception for bimmsbm errors"""
    pass


class NetworkValidationError(BiMMSBMError):
    """Raised when network inputs are malformed or inconsistent"""
    pass


class ConfigError(BiMMSBMError):
    """Raised when a configuration value is out of range"""
    pass


class NumericalError(BiMMSBMError):
    """Raised when a computation produces non-finite values"""
    pass


class DivergenceError(NumericalError):
    """Raised when a fit diverges (non-finite lower bound)"""

    def __init__(self, message: str, iteration: Optional[int] = None):
        self.message = message
        self.iteration = iteration
        super().__init__(self.message)


class InitializationError(BiMMSBMError):
    """Raised when co-clustering cannot populate the requested groups"""
    pass


class EvaluationError(BiMMSBMError):
    """Raised when an evaluation input is unusable"""
    pass
