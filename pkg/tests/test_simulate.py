# tests/test_simulate.py
"""
Tests for network simulation and the calibration scenarios
"""

import numpy as np
import pytest
from scipy.special import logit

from bimmsbm.exceptions import ConfigError
from bimmsbm.model import ModelParams
from bimmsbm.simulate import (PREDICTOR_SD, load_truth, sample_categorical, sample_dirichlet_rows, save_truth,
                              scenario, simulate_network)


class TestScenarios:
    """Named calibration scenarios"""

    def test_easy_small(self):
        spec = scenario("easy")
        assert (spec.n1, spec.n2) == (100, 200)
        params = spec.to_params()
        assert np.allclose(params.b, logit(np.array([[0.85, 0.01], [0.01, 0.99]])))
        assert params.beta1.tolist() == [[-4.5, 0.0], [-4.5, 0.0]]
        assert params.gamma.tolist() == [0.0]

    def test_large(self):
        spec = scenario("hard", "large")
        assert (spec.n1, spec.n2) == (1000, 2000)

    def test_unknown_name(self):
        with pytest.raises(ConfigError, match="unknown scenario 'impossible'"):
            scenario("impossible")

    def test_unknown_size(self):
        with pytest.raises(ConfigError, match="unknown size"):
            scenario("easy", "huge")


class TestSimulateNetwork:
    """Draws from the generative model"""

    def test_scenario_dimensions(self):
        net, truth = simulate_network(scenario("medium"), seed=1)
        assert (net.n1, net.n2, net.j1, net.j2, net.jd) == (100, 200, 2, 2, 1)
        assert truth.pi.shape == (100, 2)
        assert truth.z.shape == (100, 200)
        assert np.allclose(truth.psi.sum(axis=1), 1.0)
        assert net.x[:, 1].std() == pytest.approx(PREDICTOR_SD, rel=0.3)

    def test_same_seed_same_network(self):
        first, _ = simulate_network(scenario("easy"), seed=7)
        second, _ = simulate_network(scenario("easy"), seed=7)
        third, _ = simulate_network(scenario("easy"), seed=8)
        assert np.array_equal(first.y, second.y)
        assert np.array_equal(first.x, second.x)
        assert not np.array_equal(first.y, third.y)

    def test_from_params_requires_sizes(self):
        with pytest.raises(ConfigError, match="node counts"):
            simulate_network(ModelParams.zeros(2, 2, 1, 1, 0))

    def test_from_params(self):
        net, truth = simulate_network(ModelParams.zeros(2, 3, 2, 1, 0), 10, 20, seed=0)
        assert (net.n1, net.n2, net.jd) == (10, 20, 0)
        assert truth.psi.shape == (20, 3)

    def test_fixed_memberships_and_covariates(self):
        params = ModelParams(b=[[10.0, -10.0], [-10.0, 10.0]], gamma=[], beta1=[[0.0], [0.0]],
                             beta2=[[0.0], [0.0]])
        pi = np.array([[1.0, 0.0], [0.0, 1.0]])
        psi = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        net, truth = simulate_network(params, x=np.ones((2, 1)), w=np.ones((3, 1)), d=np.zeros((2, 3, 0)),
                                      pi=pi, psi=psi, seed=2)
        assert net.y.tolist() == [[1, 0, 1], [0, 1, 0]]
        assert np.array_equal(truth.z, [[0, 0, 0], [1, 1, 1]])

    def test_covariate_shape_mismatch(self):
        with pytest.raises(ConfigError, match="covariate shapes"):
            simulate_network(ModelParams.zeros(2, 2, 2, 1, 0), 4, 5, x=np.ones((4, 1)))

    def test_truth_roundtrip(self, tmp_path):
        _, truth = simulate_network(ModelParams.zeros(2, 2, 1, 1, 1), 3, 4, seed=0)
        path = save_truth(str(tmp_path / "truth.json"), truth)
        loaded = load_truth(path)
        assert np.array_equal(loaded.z, truth.z)
        assert np.allclose(loaded.pi, truth.pi)
        assert loaded.params.k1 == 2


class TestSamplers:
    """Dirichlet and categorical draws"""

    def test_tiny_concentrations(self):
        rows = sample_dirichlet_rows(np.full((50, 3), 1e-3), np.random.default_rng(0))
        assert np.isfinite(rows).all()
        assert np.allclose(rows.sum(axis=1), 1.0)

    def test_dirichlet_mean(self):
        alpha = np.tile([1.0, 2.0, 7.0], (20000, 1))
        rows = sample_dirichlet_rows(alpha, np.random.default_rng(1))
        assert rows.mean(axis=0) == pytest.approx([0.1, 0.2, 0.7], abs=0.01)

    def test_categorical_inverse_cdf(self):
        probs = np.array([[0.2, 0.3, 0.5]])
        uniforms = np.array([[0.1, 0.25, 0.6, 0.999]])
        assert sample_categorical(probs, uniforms).tolist() == [[0, 1, 2, 2]]
