# tests/test_uncertainty.py
"""
Tests for curvature-based standard errors
"""

import numpy as np
import pytest
from scipy.special import digamma

from bimmsbm.estep import VariationalState
from bimmsbm.exceptions import ConfigError
from bimmsbm.mstep import grad_beta, grad_gamma
from bimmsbm.model import compute_concentrations
from bimmsbm.uncertainty import (block_standard_errors, compute_standard_errors, expected_digamma_exact,
                                 expected_tie_probability, hessian_beta, hessian_gamma, sample_poisson_binomial,
                                 standard_errors)

STEP = 1e-5


def jacobian(gradient_at, array):
    """Central-difference Jacobian of a flattened gradient with respect to ``array`` (group-major)"""
    columns = []
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + STEP
        upper = gradient_at().reshape(-1)
        array[index] = original - STEP
        lower = gradient_at().reshape(-1)
        array[index] = original
        columns.append((upper - lower) / (2 * STEP))
    return np.column_stack(columns)


class TestHessianGamma:
    """Curvature in the dyadic coefficients"""

    @pytest.mark.parametrize("seed", range(20))
    def test_exact_matches_finite_differences(self, make_instance, priors, seed):
        net, params, conc, state = make_instance(seed, n1=3 + seed % 3, n2=4 + seed % 4, k1=1 + seed % 3,
                                                 k2=1 + (seed // 3) % 3)
        numeric = jacobian(lambda: grad_gamma(net, params, priors, state), params.gamma)
        analytic = hessian_gamma(net, params, priors, state, method="exact")
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)

    def test_plugin_equals_exact_for_hard_memberships(self, make_instance, priors):
        net, params, conc, state = make_instance(21, onehot=True)
        plugin = hessian_gamma(net, params, priors, state, conc)
        exact = hessian_gamma(net, params, priors, state, conc, method="exact")
        np.testing.assert_allclose(plugin, exact, rtol=1e-10)

    def test_symmetric_negative_definite(self, make_instance, priors):
        net, params, conc, state = make_instance(22)
        hessian = hessian_gamma(net, params, priors, state)
        assert np.allclose(hessian, hessian.T)
        assert np.all(np.linalg.eigvalsh(hessian) < 0)

    def test_unknown_method(self, make_instance, priors):
        net, params, _, state = make_instance(23)
        with pytest.raises(ConfigError, match="unknown method"):
            hessian_gamma(net, params, priors, state, method="newton")

    def test_tie_probability_nan_at_holdout(self, make_instance):
        mask = np.zeros((4, 5), dtype=bool)
        mask[1, 1] = True
        net, params, conc, state = make_instance(24, holdout=mask)
        theta_bar = expected_tie_probability(net, params, state, conc)
        assert np.isnan(theta_bar[1, 1])
        assert np.isfinite(theta_bar[~mask]).all()


class TestHessianBeta:
    """Curvature in the monadic coefficients"""

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("family", [1, 2])
    def test_matches_finite_differences_for_hard_memberships(self, make_instance, priors, seed, family):
        net, params, conc, state = make_instance(seed, onehot=True)
        beta = params.beta1 if family == 1 else params.beta2

        def gradient():
            return grad_beta(net, params, priors, compute_concentrations(params, net), state, family)

        numeric = jacobian(gradient, beta)
        monte_carlo = hessian_beta(net, params, priors, conc, state, family, s=2000, seed=seed)
        exact = hessian_beta(net, params, priors, conc, state, family, method="exact")
        np.testing.assert_allclose(exact, numeric, rtol=1e-4, atol=1e-7)
        np.testing.assert_allclose(np.diag(monte_carlo), np.diag(numeric), rtol=1e-2, atol=1e-6)

    def test_monte_carlo_close_to_exact(self, make_instance, priors):
        net, params, conc, state = make_instance(30)
        monte_carlo = hessian_beta(net, params, priors, conc, state, 1, s=4000, seed=1)
        exact = hessian_beta(net, params, priors, conc, state, 1, method="exact")
        scale = np.abs(np.diag(exact)).max()
        np.testing.assert_allclose(np.diag(monte_carlo), np.diag(exact), rtol=2e-2, atol=2e-2 * scale)

    def test_reproducible(self, make_instance, priors):
        net, params, conc, state = make_instance(31)
        first = hessian_beta(net, params, priors, conc, state, 2, s=50, seed=4)
        second = hessian_beta(net, params, priors, conc, state, 2, s=50, seed=4)
        assert np.array_equal(first, second)

    def test_without_membership_table(self, make_instance, priors):
        net, params, conc, state = make_instance(32)
        stochastic = VariationalState(c1=state.c1, c2=state.c2, c1_links=state.c1_links, c2_links=state.c2_links)
        hessian = hessian_beta(net, params, priors, conc, stochastic, 1, s=50)
        assert hessian.shape == (4, 4)
        assert np.isfinite(hessian).all()


class TestPoissonBinomial:
    """Count draws and exact expectations"""

    def test_mean(self):
        probs = np.array([0.1, 0.5, 0.9, 0.3])
        draws = sample_poisson_binomial(probs, 20000, np.random.default_rng(0))
        assert draws.mean() == pytest.approx(probs.sum(), abs=0.03)
        assert draws.min() >= 0 and draws.max() <= 4

    def test_binomial_shortcut(self):
        draws = sample_poisson_binomial(np.full(5, 1.0), 10, np.random.default_rng(0))
        assert draws.tolist() == [5] * 10

    def test_empty(self):
        assert sample_poisson_binomial(np.zeros(0), 3, np.random.default_rng(0)).tolist() == [0, 0, 0]

    def test_exact_expectation(self):
        value = expected_digamma_exact(1.5, np.array([0.5, 0.5]))
        expected = 0.25 * digamma(1.5) + 0.5 * digamma(2.5) + 0.25 * digamma(3.5)
        assert value == pytest.approx(expected)


class TestStandardErrors:
    """Cholesky-based standard errors"""

    def test_diagonal(self):
        se, ok = block_standard_errors(-np.diag([4.0, 16.0]))
        assert ok
        assert se.tolist() == pytest.approx([0.5, 0.25])

    def test_not_negative_definite(self):
        se, ok = block_standard_errors(np.diag([1.0, -1.0]), "beta1")
        assert not ok
        assert np.isnan(se).all()

    def test_empty_block(self):
        se, ok = block_standard_errors(np.zeros((0, 0)))
        assert ok and se.shape == (0,)

    def test_result_shapes_and_json(self):
        result = standard_errors(-np.eye(1), np.eye(4), -np.eye(2), (2, 2), (1, 2))
        assert result.se_beta1.shape == (2, 2)
        assert result.available == {"gamma": True, "beta1": False, "beta2": True}
        document = result.to_dict()
        assert document["se_beta1"] == [[None, None], [None, None]]
        assert document["se_beta2"] == [[1.0, 1.0]]

    def test_memory_cap_skips(self, make_instance, priors):
        net, params, conc, state = make_instance(40)
        assert compute_standard_errors(net, params, priors, conc, state, memory_cap=1) is None

    def test_compute(self, make_instance, priors):
        net, params, conc, state = make_instance(41)
        result = compute_standard_errors(net, params, priors, conc, state, samples=50)
        assert result.se_gamma.shape == (2,)
        assert result.se_beta2.shape == (3, 2)
        assert result.theta_bar.shape == (4, 5)
