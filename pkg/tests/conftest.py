# tests/conftest.py
"""
Shared fixtures for the bimmsbm test suite
"""

import numpy as np
import pytest

from bimmsbm.bigraph import from_arrays
from bimmsbm.estep import batch_state
from bimmsbm.model import ModelParams, PriorSpec, compute_concentrations


def build_instance(seed, n1=4, n2=5, k1=2, k2=3, jd=2, onehot=False, holdout=None):
    """Random network, parameters and batch variational state"""
    rng = np.random.default_rng(seed)
    y = (rng.random((n1, n2)) < 0.4).astype(int)
    x = rng.normal(size=(n1, 1))
    w = rng.normal(size=(n2, 1))
    d = rng.normal(size=(n1, n2, jd))
    net = from_arrays(y, x=x, w=w, d=d, holdout_mask=holdout)
    params = ModelParams(b=rng.normal(size=(k1, k2)), gamma=rng.normal(scale=0.5, size=jd),
                         beta1=rng.normal(scale=0.5, size=(k1, 2)), beta2=rng.normal(scale=0.5, size=(k2, 2)))
    if onehot:
        cells = rng.integers(k1 * k2, size=(n1, n2))
        phi = np.eye(k1 * k2)[cells].reshape(n1, n2, k1, k2)
    else:
        phi = rng.dirichlet(np.ones(k1 * k2), size=(n1, n2)).reshape(n1, n2, k1, k2)
    state = batch_state(net, phi)
    conc = compute_concentrations(params, net)
    return net, params, conc, state


@pytest.fixture
def make_instance():
    return build_instance


@pytest.fixture
def priors():
    return PriorSpec()


@pytest.fixture
def small_network():
    """8 x 10 network with one covariate per family and one dyadic covariate"""
    rng = np.random.default_rng(11)
    y = (rng.random((8, 10)) < 0.4).astype(int)
    return from_arrays(y, x=rng.normal(size=(8, 1)), w=rng.normal(size=(10, 1)), d=rng.normal(size=(8, 10, 1)),
                       ids1=[f"s{i}" for i in range(8)], ids2=[f"b{j}" for j in range(10)])


@pytest.fixture
def block_network():
    """Two clean diagonal blocks: rows 0-4 tie to columns 0-5, rows 5-9 to columns 6-11"""
    y = np.zeros((10, 12), dtype=int)
    y[:5, :6] = 1
    y[5:, 6:] = 1
    return from_arrays(y)


@pytest.fixture
def projection_twins():
    """Two different bipartite networks sharing one unipartite projection"""
    first = np.array([[1, 1, 0, 0],
                      [0, 1, 1, 0],
                      [0, 0, 1, 1]])
    second = np.array([[0, 1, 1, 0],
                       [0, 0, 1, 1],
                       [1, 0, 0, 1]])
    return from_arrays(first), from_arrays(second)
