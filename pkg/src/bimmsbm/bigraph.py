"""
Bipartite network data model, CSV ingestion and unipartite projection
"""

import logging
import os
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import sparse

from .exceptions import ConfigError, NetworkValidationError
from .seeding import substream

logger = logging.getLogger("bimmsbm.bigraph")

FAMILY1 = 1
FAMILY2 = 2

# Edges below this density are stored as a CSR matrix.
SPARSE_DENSITY = 0.05

EDGE_COLUMNS = ("family1_id", "family2_id", "y")
DYAD_KEYS = ("family1_id", "family2_id")

EdgeMatrix = Union[np.ndarray, sparse.csr_array]


@dataclass(frozen=True, eq=False)
class BipartiteNetwork:
    """
    Two node families with binary ties, monadic and dyadic covariates.

    Args:
        edges: N1 x N2 binary tie matrix (dense int8 or CSR)
        x: N1 x J1 family-1 covariates, first column all ones
        w: N2 x J2 family-2 covariates, first column all ones
        d: N1 x N2 x Jd dyadic covariates
        ids1, ids2: node labels per family
        holdout_mask: optional N1 x N2 boolean mask of dyads excluded from fitting
        x_names, w_names, d_names: covariate column names

    Instances are immutable; use :func:`from_arrays` to build one from plain
    arrays with intercepts and storage chosen automatically.
    """

    edges: EdgeMatrix
    x: np.ndarray
    w: np.ndarray
    d: np.ndarray
    ids1: Tuple[str, ...]
    ids2: Tuple[str, ...]
    holdout_mask: Optional[np.ndarray] = None
    x_names: Tuple[str, ...] = ()
    w_names: Tuple[str, ...] = ()
    d_names: Tuple[str, ...] = ()

    def __post_init__(self):
        n1, n2 = self.edges.shape
        if self.x.ndim != 2 or self.x.shape[0] != n1:
            raise NetworkValidationError(f"dimension mismatch: x has shape {self.x.shape}, expected ({n1}, J1)")
        if self.w.ndim != 2 or self.w.shape[0] != n2:
            raise NetworkValidationError(f"dimension mismatch: w has shape {self.w.shape}, expected ({n2}, J2)")
        if self.d.ndim != 3 or self.d.shape[:2] != (n1, n2):
            raise NetworkValidationError(f"dimension mismatch: d has shape {self.d.shape}, expected ({n1}, {n2}, Jd)")
        if len(self.ids1) != n1 or len(self.ids2) != n2:
            raise NetworkValidationError("dimension mismatch: node id counts do not match the edge matrix")
        if self.x.shape[1] == 0 or not np.all(self.x[:, 0] == 1.0):
            raise NetworkValidationError("first column of x must be the intercept (all ones)")
        if self.w.shape[1] == 0 or not np.all(self.w[:, 0] == 1.0):
            raise NetworkValidationError("first column of w must be the intercept (all ones)")
        for name, ids in (("family 1", self.ids1), ("family 2", self.ids2)):
            if len(set(ids)) != len(ids):
                raise NetworkValidationError(f"duplicate node id in {name}")
        values = self.edges.data if sparse.issparse(self.edges) else self.edges
        if values.size and not np.isin(values, (0, 1)).all():
            raise NetworkValidationError("non-binary edge value")
        if self.holdout_mask is not None and self.holdout_mask.shape != (n1, n2):
            raise NetworkValidationError("holdout mask shape does not match the edge matrix")
        for array in (self.x, self.w, self.d, self.holdout_mask):
            if isinstance(array, np.ndarray):
                array.flags.writeable = False

    @property
    def n1(self) -> int:
        return self.edges.shape[0]

    @property
    def n2(self) -> int:
        return self.edges.shape[1]

    @property
    def j1(self) -> int:
        return self.x.shape[1]

    @property
    def j2(self) -> int:
        return self.w.shape[1]

    @property
    def jd(self) -> int:
        return self.d.shape[2]

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.edges)

    @property
    def density(self) -> float:
        total = self.n1 * self.n2
        return float(self.y.sum()) / total if total else 0.0

    @cached_property
    def y(self) -> np.ndarray:
        """Dense int8 view of the tie matrix, whatever the storage"""
        dense = self.edges.toarray() if self.is_sparse else np.asarray(self.edges)
        dense = dense.astype(np.int8, copy=True)
        dense.flags.writeable = False
        return dense

    @cached_property
    def observed_mask(self) -> np.ndarray:
        """Boolean N1 x N2 mask of dyads that enter fitting sums"""
        if self.holdout_mask is None:
            mask = np.ones((self.n1, self.n2), dtype=bool)
        else:
            mask = ~self.holdout_mask.astype(bool)
        mask.flags.writeable = False
        return mask

    def observed_dyads(self) -> Tuple[np.ndarray, np.ndarray]:
        """Row and column indices of non-holdout dyads, row-major order"""
        return np.nonzero(self.observed_mask)

    def heldout_dyads(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.nonzero(~self.observed_mask)

    def n_observed(self, family: int) -> np.ndarray:
        """Per-node count of non-holdout dyads"""
        axis = 1 if family == FAMILY1 else 0
        return self.observed_mask.sum(axis=axis).astype(np.float64)

    def degrees(self, family: int, observed_only: bool = False) -> np.ndarray:
        y = self.y & self.observed_mask if observed_only else self.y
        axis = 1 if family == FAMILY1 else 0
        return np.asarray(y.sum(axis=axis), dtype=np.int64)

    def ids(self, family: int) -> Tuple[str, ...]:
        return self.ids1 if family == FAMILY1 else self.ids2

    def ids_index(self, family: int) -> Dict[str, int]:
        return {node: i for i, node in enumerate(self.ids(family))}


@dataclass(frozen=True, eq=False)
class Projection:
    """Unipartite aggregation Y Y^T of a bipartite network onto family 1"""

    counts: np.ndarray

    @property
    def degrees(self) -> np.ndarray:
        return np.diag(self.counts).copy()

    @property
    def shared_partners(self) -> np.ndarray:
        """Shared-partner counts for every unordered pair of distinct nodes"""
        upper = np.triu_indices(self.counts.shape[0], k=1)
        return self.counts[upper]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Projection):
            return NotImplemented
        return self.counts.shape == other.counts.shape and bool(np.array_equal(self.counts, other.counts))


def from_arrays(y: np.ndarray, x: Optional[np.ndarray] = None, w: Optional[np.ndarray] = None,
                d: Optional[np.ndarray] = None, ids1: Optional[Sequence[str]] = None,
                ids2: Optional[Sequence[str]] = None, holdout_mask: Optional[np.ndarray] = None,
                add_intercept: bool = True, x_names: Sequence[str] = (), w_names: Sequence[str] = (),
                d_names: Sequence[str] = ()) -> BipartiteNetwork:
    """
    Build a network from plain arrays.

    Args:
        y: N1 x N2 binary matrix
        x, w: covariates without intercept (prepended when add_intercept is True)
        d: N1 x N2 x Jd dyadic covariates (zeros with Jd=0 when omitted)
        ids1, ids2: node labels (defaults "p0".., "q0"..)

    Example:
        >>> net = from_arrays(np.eye(2, dtype=int))
        >>> net.n1, net.j1
        (2, 1)
    """
    y = np.asarray(y)
    if y.ndim != 2:
        raise NetworkValidationError(f"dimension mismatch: edge matrix must be 2-d, got shape {y.shape}")
    n1, n2 = y.shape
    if not np.isin(y, (0, 1)).all():
        raise NetworkValidationError("non-binary edge value")
    x_full, x_labels = _design(x, n1, add_intercept, x_names)
    w_full, w_labels = _design(w, n2, add_intercept, w_names)
    if d is None:
        d = np.zeros((n1, n2, 0))
    d = np.array(d, dtype=np.float64)
    if d.ndim == 2:
        d = d[:, :, np.newaxis]
    ids1 = tuple(str(i) for i in ids1) if ids1 is not None else tuple(f"p{i}" for i in range(n1))
    ids2 = tuple(str(i) for i in ids2) if ids2 is not None else tuple(f"q{i}" for i in range(n2))
    d_labels = tuple(d_names) if d_names else tuple(f"d{j + 1}" for j in range(d.shape[2]))
    total = n1 * n2
    density = float(y.sum()) / total if total else 0.0
    edges: EdgeMatrix
    if total and density < SPARSE_DENSITY:
        edges = sparse.csr_array(y.astype(np.int8))
    else:
        edges = y.astype(np.int8)
    mask = None if holdout_mask is None else np.array(holdout_mask, dtype=bool)
    return BipartiteNetwork(edges=edges, x=x_full, w=w_full, d=d, ids1=ids1, ids2=ids2, holdout_mask=mask,
                            x_names=x_labels, w_names=w_labels, d_names=d_labels)


def _design(cov: Optional[np.ndarray], n: int, add_intercept: bool,
            names: Sequence[str]) -> Tuple[np.ndarray, Tuple[str, ...]]:
    if cov is None:
        return np.ones((n, 1)), ("intercept",)
    cov = np.array(cov, dtype=np.float64)
    if cov.ndim == 1:
        cov = cov[:, np.newaxis]
    if cov.shape[0] != n:
        raise NetworkValidationError(f"dimension mismatch: covariate matrix has {cov.shape[0]} rows, expected {n}")
    labels = tuple(names) if names else tuple(f"x{j + 1}" for j in range(cov.shape[1] - (0 if add_intercept else 1)))
    if add_intercept:
        return np.column_stack([np.ones(n), cov]), ("intercept",) + labels
    return cov, ("intercept",) + labels


def _read_table(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise NetworkValidationError(f"file not found: {path}")
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise NetworkValidationError(f"malformed row in {path}: {e}")


def _numeric_block(frame: pd.DataFrame, columns: Sequence[str], path: str) -> np.ndarray:
    if not columns:
        return np.zeros((len(frame), 0))
    try:
        return np.array(frame[list(columns)].to_numpy(dtype=object), dtype=np.float64)
    except ValueError as e:
        raise NetworkValidationError(f"malformed row in {path}: non-numeric covariate ({e})")


def _read_family(path: str) -> Tuple[Tuple[str, ...], np.ndarray, Tuple[str, ...]]:
    frame = _read_table(path)
    if not len(frame.columns) or frame.columns[0] != "id":
        raise NetworkValidationError(f"malformed row in {path}: header must start with 'id'")
    ids = tuple(frame["id"])
    if len(set(ids)) != len(ids):
        raise NetworkValidationError(f"duplicate node id in {path}")
    names = tuple(frame.columns[1:])
    values = _numeric_block(frame, names, path)
    if not np.isfinite(values).all():
        raise NetworkValidationError(f"malformed row in {path}: non-finite covariate")
    return ids, values, names


def _dyad_index(frame: pd.DataFrame, index1: Dict[str, int], index2: Dict[str, int],
                path: str) -> Tuple[np.ndarray, np.ndarray]:
    rows = np.empty(len(frame), dtype=np.int64)
    cols = np.empty(len(frame), dtype=np.int64)
    for k, (a, b) in enumerate(zip(frame["family1_id"], frame["family2_id"])):
        if a not in index1:
            raise NetworkValidationError(f"unknown node '{a}' in {path}")
        if b not in index2:
            raise NetworkValidationError(f"unknown node '{b}' in {path}")
        rows[k], cols[k] = index1[a], index2[b]
    flat = rows * len(index2) + cols
    if len(np.unique(flat)) != len(flat):
        raise NetworkValidationError(f"malformed row in {path}: duplicate dyad")
    return rows, cols


def load_network(edge_csv_path: str, family1_csv_path: Optional[str] = None,
                 family2_csv_path: Optional[str] = None,
                 dyadic_csv_path: Optional[str] = None) -> BipartiteNetwork:
    """
    Read a bipartite network from CSV files.

    Args:
        edge_csv_path: ``family1_id,family2_id,y``; unlisted dyads are y=0
        family1_csv_path: ``id,<cov1>,...`` for family 1 (intercept injected)
        family2_csv_path: ``id,<cov1>,...`` for family 2 (intercept injected)
        dyadic_csv_path: ``family1_id,family2_id,<cov1>,...``; unlisted dyads are zero

    When a family file is omitted its node ids are taken from the edge file in
    order of first appearance and the node gets an intercept-only design.

    Raises:
        NetworkValidationError: malformed row, duplicate node id, unknown node,
            dimension mismatch or non-binary edge value
    """
    edges = _read_table(edge_csv_path)
    missing = [c for c in EDGE_COLUMNS if c not in edges.columns]
    if missing:
        raise NetworkValidationError(f"malformed row in {edge_csv_path}: missing columns {missing}")

    if family1_csv_path is not None:
        ids1, x, x_names = _read_family(family1_csv_path)
    else:
        ids1 = tuple(dict.fromkeys(edges["family1_id"]))
        x, x_names = np.zeros((len(ids1), 0)), ()
    if family2_csv_path is not None:
        ids2, w, w_names = _read_family(family2_csv_path)
    else:
        ids2 = tuple(dict.fromkeys(edges["family2_id"]))
        w, w_names = np.zeros((len(ids2), 0)), ()

    index1 = {node: i for i, node in enumerate(ids1)}
    index2 = {node: i for i, node in enumerate(ids2)}
    rows, cols = _dyad_index(edges, index1, index2, edge_csv_path)
    values = _numeric_block(edges, ["y"], edge_csv_path)[:, 0]
    if not np.isin(values, (0.0, 1.0)).all():
        raise NetworkValidationError(f"non-binary edge value in {edge_csv_path}")
    y = np.zeros((len(ids1), len(ids2)), dtype=np.int8)
    y[rows, cols] = values.astype(np.int8)

    d = np.zeros((len(ids1), len(ids2), 0))
    d_names: Tuple[str, ...] = ()
    if dyadic_csv_path is not None:
        dyadic = _read_table(dyadic_csv_path)
        if any(c not in dyadic.columns for c in DYAD_KEYS):
            raise NetworkValidationError(f"malformed row in {dyadic_csv_path}: missing dyad id columns")
        d_names = tuple(c for c in dyadic.columns if c not in DYAD_KEYS)
        d_rows, d_cols = _dyad_index(dyadic, index1, index2, dyadic_csv_path)
        d = np.zeros((len(ids1), len(ids2), len(d_names)))
        d[d_rows, d_cols, :] = _numeric_block(dyadic, d_names, dyadic_csv_path)
        if not np.isfinite(d).all():
            raise NetworkValidationError(f"malformed row in {dyadic_csv_path}: non-finite covariate")

    net = from_arrays(y, x=x, w=w, d=d, ids1=ids1, ids2=ids2, x_names=x_names, w_names=w_names,
                      d_names=d_names)
    logger.info(f"Loaded network with {net.n1} x {net.n2} nodes, {int(net.y.sum())} ties, "
                f"J1={net.j1}, J2={net.j2}, Jd={net.jd} ({'sparse' if net.is_sparse else 'dense'} storage)")
    return net


def save_network(net: BipartiteNetwork, out_dir: str, prefix: str = "") -> Dict[str, str]:
    """
    Write a network in the CSV formats read by :func:`load_network`.

    Only ties are listed in the edge file and only dyads with a nonzero
    covariate in the dyadic file. Floats are written with 17 significant
    digits so that reading the files back reproduces the arrays exactly.

    Returns:
        Mapping of ``edges``, ``family1``, ``family2`` (and ``dyadic`` when
        Jd > 0) to the written paths
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "edges": os.path.join(out_dir, f"{prefix}edges.csv"),
        "family1": os.path.join(out_dir, f"{prefix}family1.csv"),
        "family2": os.path.join(out_dir, f"{prefix}family2.csv"),
    }
    rows, cols = np.nonzero(net.y)
    pd.DataFrame({
        "family1_id": [net.ids1[i] for i in rows],
        "family2_id": [net.ids2[j] for j in cols],
        "y": np.ones(len(rows), dtype=np.int64),
    }).to_csv(paths["edges"], index=False)

    for key, ids, cov, names in (("family1", net.ids1, net.x, net.x_names),
                                 ("family2", net.ids2, net.w, net.w_names)):
        labels = list(names[1:]) if len(names) == cov.shape[1] else [f"x{j}" for j in range(1, cov.shape[1])]
        frame = pd.DataFrame(cov[:, 1:], columns=labels)
        frame.insert(0, "id", list(ids))
        frame.to_csv(paths[key], index=False, float_format="%.17g")

    if net.jd > 0:
        paths["dyadic"] = os.path.join(out_dir, f"{prefix}dyadic.csv")
        d_rows, d_cols = np.nonzero(np.any(net.d != 0.0, axis=2))
        names = list(net.d_names) if len(net.d_names) == net.jd else [f"d{j + 1}" for j in range(net.jd)]
        frame = pd.DataFrame(net.d[d_rows, d_cols, :], columns=names)
        frame.insert(0, "family2_id", [net.ids2[j] for j in d_cols])
        frame.insert(0, "family1_id", [net.ids1[i] for i in d_rows])
        frame.to_csv(paths["dyadic"], index=False, float_format="%.17g")
    logger.info(f"Wrote network files to {out_dir}")
    return paths


def project_unipartite(net: BipartiteNetwork) -> Projection:
    """Aggregate onto family 1: counts[p, p'] = number of shared family-2 partners"""
    if net.is_sparse:
        y = net.edges.astype(np.int64)
        counts = (y @ y.T).toarray()
    else:
        y = net.y.astype(np.int64)
        counts = y @ y.T
    return Projection(counts=np.asarray(counts, dtype=np.int64))


def aggregated_expectation(pi: np.ndarray, theta: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """
    Aggregated structure Pi [Theta Psi^T Psi Theta^T] Pi^T of a projection.

    The bracketed K1 x K1 factor is all that survives aggregation: different
    (Theta, Psi) pairs sharing it produce the same projected expectation.
    """
    inner = theta @ psi.T @ psi @ theta.T
    return pi @ inner @ pi.T


def split_holdout(net: BipartiteNetwork, fraction: float, seed: int) -> BipartiteNetwork:
    """
    Mark floor(fraction * N1 * N2) dyads, chosen uniformly at random, as held out.

    Raises:
        ConfigError: fraction outside (0, 1)
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"holdout fraction must lie in (0, 1), got {fraction}")
    total = net.n1 * net.n2
    # tolerance keeps products such as 0.29 * 100 = 28.999... from losing a dyad
    count = int(np.floor(fraction * total + 1e-9))
    rng = substream(seed, "holdout")
    chosen = rng.choice(total, size=count, replace=False)
    mask = np.zeros(total, dtype=bool)
    mask[chosen] = True
    logger.debug(f"Held out {count} of {total} dyads")
    return replace(net, holdout_mask=mask.reshape(net.n1, net.n2))
