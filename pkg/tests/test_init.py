# tests/test_init.py
"""
Tests for bimmsbm package initialization
"""

import bimmsbm
from bimmsbm import (
    __version__,
    __author__,
    BiMMSBMError,
    ConfigError,
    DivergenceError,
    EvaluationError,
    InitializationError,
    NetworkValidationError,
    NumericalError,
    __all__
)


class TestPackageInit:
    """Test package initialization and imports"""

    def test_version_import_success(self):
        """Test successful version import"""
        assert isinstance(__version__, str)
        assert len(__version__) > 0

    def test_author_exists(self):
        """Test that author attribute exists"""
        assert isinstance(__author__, str)
        assert __author__ == "Mike Quest"

    def test_all_exports(self):
        """Test __all__ contains expected exports"""
        expected_exports = ["BipartiteNetwork", "load_network", "FitConfig", "fit", "simulate_network",
                            "predict_edges", "gof", "select_k", "BiMMSBMError"]
        for export in expected_exports:
            assert export in __all__

    def test_exports_resolve(self):
        """Test every name in __all__ is importable"""
        for name in __all__:
            assert getattr(bimmsbm, name) is not None

    def test_exception_hierarchy(self):
        """Test exception class hierarchy"""
        for error in (ConfigError, NetworkValidationError, NumericalError, InitializationError, EvaluationError):
            assert issubclass(error, BiMMSBMError)
        assert issubclass(DivergenceError, NumericalError)

    def test_divergence_carries_iteration(self):
        """Test DivergenceError keeps the failing iteration"""
        error = DivergenceError("fit diverged", iteration=42)
        assert error.iteration == 42
        assert str(error) == "fit diverged"
