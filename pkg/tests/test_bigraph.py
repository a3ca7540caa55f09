# tests/test_bigraph.py
"""
Tests for the bipartite network data model and CSV ingestion
"""

import numpy as np
import pytest

from bimmsbm.bigraph import (FAMILY1, FAMILY2, aggregated_expectation, from_arrays, load_network,
                             project_unipartite, save_network, split_holdout)
from bimmsbm.exceptions import ConfigError, NetworkValidationError


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestFromArrays:
    """Building networks from plain arrays"""

    def test_intercepts_injected(self):
        net = from_arrays(np.eye(3, dtype=int), x=np.arange(3.0), w=np.ones((3, 2)))
        assert net.j1 == 2
        assert net.j2 == 3
        assert np.all(net.x[:, 0] == 1.0)
        assert net.jd == 0

    def test_default_ids(self):
        net = from_arrays(np.zeros((2, 3), dtype=int))
        assert net.ids1 == ("p0", "p1")
        assert net.ids2 == ("q0", "q1", "q2")

    def test_sparse_storage_for_sparse_ties(self):
        y = np.zeros((30, 40), dtype=int)
        y[0, 0] = 1
        net = from_arrays(y)
        assert net.is_sparse
        assert net.y.sum() == 1

    def test_dense_storage(self, small_network):
        assert not small_network.is_sparse

    def test_non_binary_rejected(self):
        with pytest.raises(NetworkValidationError, match="non-binary"):
            from_arrays(np.array([[0, 2], [1, 0]]))

    def test_dimension_mismatch(self):
        with pytest.raises(NetworkValidationError, match="dimension mismatch"):
            from_arrays(np.zeros((2, 3), dtype=int), x=np.zeros((3, 1)))

    def test_duplicate_ids(self):
        with pytest.raises(NetworkValidationError, match="duplicate"):
            from_arrays(np.zeros((2, 2), dtype=int), ids1=["a", "a"])

    def test_arrays_are_read_only(self, small_network):
        with pytest.raises(ValueError):
            small_network.x[0, 0] = 5.0

    def test_degrees_and_observed(self):
        y = np.array([[1, 0, 1], [0, 1, 1]])
        mask = np.array([[False, False, True], [False, False, False]])
        net = from_arrays(y, holdout_mask=mask)
        assert net.degrees(FAMILY1).tolist() == [2, 2]
        assert net.degrees(FAMILY1, observed_only=True).tolist() == [1, 2]
        assert net.degrees(FAMILY2).tolist() == [1, 1, 2]
        assert net.n_observed(FAMILY1).tolist() == [2.0, 3.0]
        assert net.n_observed(FAMILY2).tolist() == [2.0, 2.0, 1.0]
        rows, cols = net.heldout_dyads()
        assert (rows.tolist(), cols.tolist()) == ([0], [2])


class TestLoadNetwork:
    """CSV ingestion"""

    def test_load_with_covariates(self, tmp_path):
        edges = write(tmp_path / "e.csv", "family1_id,family2_id,y\na,x,1\nb,y,1\na,y,0\n")
        fam1 = write(tmp_path / "s.csv", "id,age\na,1.5\nb,2.5\nc,0\n")
        fam2 = write(tmp_path / "b.csv", "id,size\nx,3\ny,4\n")
        dyad = write(tmp_path / "d.csv", "family1_id,family2_id,dist\na,x,0.5\n")
        net = load_network(edges, fam1, fam2, dyad)
        assert (net.n1, net.n2, net.j1, net.j2, net.jd) == (3, 2, 2, 2, 1)
        assert net.y.tolist() == [[1, 0], [0, 1], [0, 0]]
        assert net.x[:, 1].tolist() == [1.5, 2.5, 0.0]
        assert net.d[0, 0, 0] == 0.5
        assert net.d[1, 1, 0] == 0.0
        assert net.x_names == ("intercept", "age")
        assert net.d_names == ("dist",)

    def test_ids_from_edges_when_family_files_omitted(self, tmp_path):
        edges = write(tmp_path / "e.csv", "family1_id,family2_id,y\nb,x,1\na,y,1\n")
        net = load_network(edges)
        assert net.ids1 == ("b", "a")
        assert net.j1 == 1

    def test_unknown_node(self, tmp_path):
        edges = write(tmp_path / "e.csv", "family1_id,family2_id,y\nz,x,1\n")
        fam1 = write(tmp_path / "s.csv", "id\na\n")
        with pytest.raises(NetworkValidationError, match="unknown node 'z'"):
            load_network(edges, fam1)

    def test_duplicate_node_id(self, tmp_path):
        edges = write(tmp_path / "e.csv", "family1_id,family2_id,y\na,x,1\n")
        fam1 = write(tmp_path / "s.csv", "id,v\na,1\na,2\n")
        with pytest.raises(NetworkValidationError, match="duplicate node id"):
            load_network(edges, fam1)

    def test_non_binary_edge(self, tmp_path):
        edges = write(tmp_path / "e.csv", "family1_id,family2_id,y\na,x,2\n")
        with pytest.raises(NetworkValidationError, match="non-binary"):
            load_network(edges)

    def test_missing_columns(self, tmp_path):
        edges = write(tmp_path / "e.csv", "a,b\n1,2\n")
        with pytest.raises(NetworkValidationError, match="missing columns"):
            load_network(edges)

    def test_non_numeric_covariate(self, tmp_path):
        edges = write(tmp_path / "e.csv", "family1_id,family2_id,y\na,x,1\n")
        fam1 = write(tmp_path / "s.csv", "id,v\na,abc\n")
        with pytest.raises(NetworkValidationError, match="malformed row"):
            load_network(edges, fam1)

    def test_missing_file(self, tmp_path):
        with pytest.raises(NetworkValidationError, match="file not found"):
            load_network(str(tmp_path / "nope.csv"))

    def test_save_then_load_reproduces_network(self, tmp_path, small_network):
        paths = save_network(small_network, str(tmp_path))
        loaded = load_network(paths["edges"], paths["family1"], paths["family2"], paths["dyadic"])
        assert loaded.ids1 == small_network.ids1
        assert loaded.ids2 == small_network.ids2
        assert np.array_equal(loaded.y, small_network.y)
        assert np.array_equal(loaded.x, small_network.x)
        assert np.array_equal(loaded.w, small_network.w)
        assert np.array_equal(loaded.d, small_network.d)


class TestProjection:
    """Unipartite aggregation"""

    def test_twins_share_projection(self, projection_twins):
        first, second = projection_twins
        assert not np.array_equal(first.y, second.y)
        assert project_unipartite(first) == project_unipartite(second)

    def test_projection_counts(self):
        net = from_arrays(np.array([[1, 1, 0], [0, 1, 1]]))
        projection = project_unipartite(net)
        assert projection.counts.tolist() == [[2, 1], [1, 2]]
        assert projection.degrees.tolist() == [2, 2]
        assert projection.shared_partners.tolist() == [1]

    def test_aggregated_expectation_depends_on_inner_factor_only(self):
        rng = np.random.default_rng(3)
        pi = rng.dirichlet(np.ones(2), size=5)
        theta = rng.random((2, 3))
        psi = rng.dirichlet(np.ones(3), size=4)
        rotation = np.linalg.qr(rng.normal(size=(4, 4)))[0]
        expected = aggregated_expectation(pi, theta, psi)
        assert np.allclose(aggregated_expectation(pi, theta, rotation @ psi), expected)

    def test_invariant_to_family2_order(self):
        rng = np.random.default_rng(6)
        y = (rng.random((6, 9)) < 0.4).astype(int)
        shuffled = from_arrays(y[:, rng.permutation(9)])
        assert project_unipartite(shuffled) == project_unipartite(from_arrays(y))
        assert np.array_equal(project_unipartite(shuffled).counts, y @ y.T)


class TestSplitHoldout:
    """Random held-out dyads"""

    def test_fraction_and_determinism(self, small_network):
        first = split_holdout(small_network, 0.25, seed=4)
        second = split_holdout(small_network, 0.25, seed=4)
        assert first.holdout_mask.sum() == 20
        assert np.array_equal(first.holdout_mask, second.holdout_mask)
        assert first.observed_mask.sum() == 60

    def test_count_rounds_exact_products(self):
        net = from_arrays(np.zeros((10, 10), dtype=int))
        assert split_holdout(net, 0.29, seed=1).holdout_mask.sum() == 29
        assert split_holdout(net, 0.57, seed=1).holdout_mask.sum() == 57
        assert split_holdout(net, 0.295, seed=1).holdout_mask.sum() == 29

    def test_invalid_fraction(self, small_network):
        for fraction in (0.0, 1.0, -0.1):
            with pytest.raises(ConfigError, match="holdout fraction"):
                split_holdout(small_network, fraction, seed=0)

    def test_family_constants(self):
        assert FAMILY1 != FAMILY2
