# tests/test_mstep.py
"""
Tests for the lower bound, its gradients and the line-searched M-step
"""

import numpy as np
import pytest
from scipy.special import gammaln

from bimmsbm.estep import batch_state
from bimmsbm.exceptions import ConfigError, NumericalError
from bimmsbm.model import ModelParams, PriorSpec, compute_concentrations
from bimmsbm.mstep import (ARMIJO, GradientSet, backtracking_ascent, elbo, grad_b, grad_beta, grad_gamma,
                           gradients, line_search_mstep, mstep_update, prior_penalty)

STEP = 1e-5


def numeric_gradient(value_at, array):
    """Central differences of value_at() with respect to every entry of ``array`` (modified in place)"""
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + STEP
        upper = value_at()
        array[index] = original - STEP
        lower = value_at()
        array[index] = original
        grad[index] = (upper - lower) / (2 * STEP)
    return grad


def instance_sizes(seed):
    rng = np.random.default_rng(seed + 100)
    return dict(n1=int(rng.integers(2, 6)), n2=int(rng.integers(2, 8)), k1=int(rng.integers(1, 4)),
                k2=int(rng.integers(1, 4)))


class TestElbo:
    """Lower bound evaluation"""

    def test_components_add_up(self, make_instance, priors):
        net, params, conc, state = make_instance(1)
        bound = elbo(net, params, priors, conc, state)
        assert bound.total == pytest.approx(sum(bound.components()))

    def test_straight_line_terms(self, make_instance, priors):
        net, params, conc, state = make_instance(2)
        bound = elbo(net, params, priors, conc, state)
        likelihood = entropy = 0.0
        for p in range(net.n1):
            for q in range(net.n2):
                phi = state.phi[p, q]
                theta = 1.0 / (1.0 + np.exp(-(params.b + net.d[p, q] @ params.gamma)))
                cell = np.log(theta) if net.y[p, q] else np.log(1.0 - theta)
                likelihood += np.sum(phi * cell)
                entropy -= np.sum(phi * np.log(phi))
        dirichlet = sum(gammaln(conc.xi1[p]) - gammaln(conc.xi1[p] + net.n2)
                        + np.sum(gammaln(conc.alpha1[p] + state.c1[p]) - gammaln(conc.alpha1[p]))
                        for p in range(net.n1))
        assert bound.likelihood_term == pytest.approx(likelihood)
        assert bound.entropy_term == pytest.approx(entropy)
        assert bound.dirichlet_term1 == pytest.approx(dirichlet)
        assert bound.prior_term == pytest.approx(prior_penalty(params, priors))

    def test_prior_penalty(self, make_instance):
        _, params, _, _ = make_instance(3)
        params.b[:] = 1.0
        params.gamma[:] = 0.0
        params.beta1[:] = 0.0
        params.beta2[:] = 0.0
        expected = -params.b.size / (2 * 4.0)
        assert prior_penalty(params, PriorSpec(sigma_b=2.0)) == pytest.approx(expected)

    @pytest.mark.parametrize("seed", range(5))
    def test_invariant_under_joint_relabeling(self, make_instance, priors, seed):
        net, params, conc, state = make_instance(seed, k1=3, k2=2)
        rng = np.random.default_rng(seed)
        perm1, perm2 = rng.permutation(3), rng.permutation(2)
        relabeled = ModelParams(b=params.b[perm1][:, perm2], gamma=params.gamma.copy(), beta1=params.beta1[perm1],
                                beta2=params.beta2[perm2])
        relabeled_state = batch_state(net, state.phi[:, :, perm1][:, :, :, perm2])
        relabeled_conc = compute_concentrations(relabeled, net)
        before = elbo(net, params, priors, conc, state)
        after = elbo(net, relabeled, priors, relabeled_conc, relabeled_state)
        assert after.total == pytest.approx(before.total, rel=1e-10)
        np.testing.assert_allclose(after.components(), before.components(), rtol=1e-10, atol=1e-10)

    def test_weighted_subset(self, make_instance, priors):
        net, params, conc, state = make_instance(4)
        dyads = (np.array([0, 1]), np.array([0, 0]))
        once = elbo(net, params, priors, conc, state, dyads)
        twice = elbo(net, params, priors, conc, state, dyads, weights=2.0)
        assert twice.likelihood_term == pytest.approx(2.0 * once.likelihood_term)
        assert twice.dirichlet_term2 == pytest.approx(once.dirichlet_term2)


class TestGradients:
    """Analytic gradients against central finite differences of the lower bound"""

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences(self, make_instance, priors, seed):
        net, params, conc, state = make_instance(seed, jd=2, **instance_sizes(seed))

        def bound():
            return elbo(net, params, priors, compute_concentrations(params, net), state).total

        analytic = gradients(net, params, priors, conc, state)
        for name in ("b", "gamma", "beta1", "beta2"):
            numeric = numeric_gradient(bound, getattr(params, name))
            np.testing.assert_allclose(getattr(analytic, name), numeric, rtol=1e-4, atol=1e-6, err_msg=name)

    def test_gamma_without_dyadic_covariates(self, make_instance, priors):
        net, params, _, state = make_instance(5, jd=0)
        assert grad_gamma(net, params, priors, state).shape == (0,)

    def test_gradient_set_scaling(self, make_instance, priors):
        net, params, conc, state = make_instance(6)
        grads = gradients(net, params, priors, conc, state)
        scaled = grads.scaled(b=0.5, beta2=2.0)
        assert np.allclose(scaled.b, 0.5 * grads.b)
        assert np.allclose(scaled.beta2, 2.0 * grads.beta2)
        assert np.allclose(scaled.gamma, grads.gamma)
        assert scaled.is_finite()

    def test_holdout_excluded(self, make_instance, priors):
        mask = np.zeros((4, 5), dtype=bool)
        mask[0, :2] = True
        net, params, conc, state = make_instance(7, holdout=mask)

        def bound():
            return elbo(net, params, priors, compute_concentrations(params, net), state).total

        np.testing.assert_allclose(grad_b(net, params, priors, state), numeric_gradient(bound, params.b),
                                   rtol=1e-4, atol=1e-6)
        np.testing.assert_allclose(grad_beta(net, params, priors, conc, state, 1),
                                   numeric_gradient(bound, params.beta1), rtol=1e-4, atol=1e-6)


class TestUpdates:
    """Ascent steps"""

    def test_mstep_update(self, make_instance, priors):
        net, params, conc, state = make_instance(8)
        grads = gradients(net, params, priors, conc, state)
        updated = mstep_update(params, grads, 0.1)
        assert np.allclose(updated.b, params.b + 0.1 * grads.b)

    def test_non_positive_step(self, make_instance, priors):
        net, params, conc, state = make_instance(9)
        grads = gradients(net, params, priors, conc, state)
        with pytest.raises(ConfigError, match="step must be positive"):
            mstep_update(params, grads, 0.0)

    def test_non_finite_update(self, make_instance):
        _, params, _, _ = make_instance(10)
        grads = GradientSet(b=np.full(params.b.shape, np.inf), gamma=params.gamma, beta1=params.beta1,
                            beta2=params.beta2)
        with pytest.raises(NumericalError, match="non-finite"):
            mstep_update(params, grads, 1.0)

    def test_backtracking_on_quadratic(self):
        def objective(x):
            return -float(np.sum((x - 1.0) ** 2))

        x = np.zeros(2)
        gradient = 2.0 * (1.0 - x)
        new_x, value, step = backtracking_ascent(objective, x, objective(x), gradient, gradient, 8.0)
        assert step == 0.5
        assert np.allclose(new_x, [1.0, 1.0])
        assert value >= objective(x) + ARMIJO * step * gradient @ gradient

    def test_backtracking_rejects_descent_direction(self):
        x = np.zeros(1)
        new_x, value, step = backtracking_ascent(lambda v: 0.0, x, 0.0, np.ones(1), -np.ones(1), 1.0)
        assert step == 0.0
        assert new_x is x

    def test_line_search_raises_bound(self, make_instance, priors):
        net, params, conc, state = make_instance(11)
        before = elbo(net, params, priors, conc, state).total
        new_params, new_conc, after = line_search_mstep(net, params, priors, conc, state, step=16.0, steps=3)
        assert after >= before
        assert after == pytest.approx(elbo(net, new_params, priors, new_conc, state).total)
