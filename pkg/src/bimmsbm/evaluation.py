"""
Held-out link prediction, label alignment, membership recovery, goodness of fit
and model selection
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.optimize import linear_sum_assignment
from scipy.sparse.csgraph import shortest_path
from sklearn.metrics import roc_auc_score

from .bigraph import FAMILY1, FAMILY2, BipartiteNetwork, split_holdout
from .exceptions import BiMMSBMError, EvaluationError
from .model import ModelParams, PriorSpec, theta_cells
from .seeding import substream
from .simulate import simulate_network
from .svi import FitConfig, FitResult, fit

logger = logging.getLogger("bimmsbm.evaluation")

DyadIndex = Tuple[np.ndarray, np.ndarray]


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    Area under the ROC curve, ties counted one half.

    Raises:
        EvaluationError: labels contain a single class
    """
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise EvaluationError("AUROC needs at least one positive and one negative label")
    return float(roc_auc_score(labels, np.asarray(scores, dtype=np.float64)))


def _resolve_dyads(net: BipartiteNetwork, dyad_set) -> DyadIndex:
    if dyad_set is None:
        return net.heldout_dyads()
    if isinstance(dyad_set, tuple) and len(dyad_set) == 2 and isinstance(dyad_set[0], np.ndarray):
        return np.asarray(dyad_set[0], dtype=np.int64), np.asarray(dyad_set[1], dtype=np.int64)
    index1, index2 = net.ids_index(FAMILY1), net.ids_index(FAMILY2)
    rows, cols = [], []
    for a, b in dyad_set:
        if a not in index1 or b not in index2:
            raise EvaluationError(f"unknown node in dyad ({a}, {b})")
        rows.append(index1[a])
        cols.append(index2[b])
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64)


def predict_edges(net: BipartiteNetwork, fit_result: FitResult,
                  dyad_set: Union[None, DyadIndex, Sequence[Tuple[str, str]]] = None) -> np.ndarray:
    """
    Predictive tie probabilities sum_gh pi_pg psi_qh logistic(B_gh + d . gamma).

    Args:
        dyad_set: index arrays (rows, cols), a sequence of (family-1 id,
            family-2 id) pairs, or None for the held-out dyads

    Raises:
        EvaluationError: unknown node or a fit that does not cover the network
    """
    if fit_result.pi_hat.shape[0] != net.n1 or fit_result.psi_hat.shape[0] != net.n2:
        raise EvaluationError("fitted memberships do not cover the network's nodes")
    rows, cols = _resolve_dyads(net, dyad_set)
    if len(rows) and (rows.max() >= net.n1 or cols.max() >= net.n2 or rows.min() < 0 or cols.min() < 0):
        raise EvaluationError("unknown node index in dyad set")
    return score_dyads(fit_result.params, fit_result.pi_hat[rows], fit_result.psi_hat[cols], net.d[rows, cols])


def score_dyads(params: ModelParams, pi_rows: np.ndarray, psi_rows: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Predictive tie probabilities from per-dyad memberships and dyadic covariates (n x Jd)"""
    theta = theta_cells(params, d)
    return np.einsum("ng,nh,ngh->n", pi_rows, psi_rows, theta)


@dataclass
class Alignment:
    """est[:, perm1] lines up with the true family-1 groups, likewise perm2"""

    perm1: np.ndarray
    perm2: np.ndarray
    cost: float


def _column_correlations(true_mix: np.ndarray, est_mix: np.ndarray) -> np.ndarray:
    """K x K Pearson correlations; zero-variance columns correlate 0 with everything"""
    t = true_mix - true_mix.mean(axis=0)
    e = est_mix - est_mix.mean(axis=0)
    norms = np.outer(np.linalg.norm(t, axis=0), np.linalg.norm(e, axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = (t.T @ e) / norms
    return np.where(norms > 0, corr, 0.0)


def match_columns(true_mix: np.ndarray, est_mix: np.ndarray) -> Tuple[np.ndarray, float]:
    """Permutation minimizing the summed (1 - correlation) of matched columns"""
    true_mix, est_mix = np.asarray(true_mix), np.asarray(est_mix)
    if true_mix.shape != est_mix.shape:
        raise EvaluationError(f"membership shapes differ: {true_mix.shape} vs {est_mix.shape}")
    cost = 1.0 - _column_correlations(true_mix, est_mix)
    rows, perm = linear_sum_assignment(cost)
    return perm, float(cost[rows, perm].sum())


def align_labels(true_mix: Union[np.ndarray, Tuple[np.ndarray, np.ndarray]],
                 est_mix: Union[np.ndarray, Tuple[np.ndarray, np.ndarray]]) -> Alignment:
    """
    Relabel estimated groups to match known groups, one assignment problem per family.

    Pass (pi, psi) pairs to align both families; with single matrices only
    perm1 is solved and perm2 is empty (no relabeling of family 2).
    """
    if not isinstance(true_mix, tuple):
        perm1, cost1 = match_columns(true_mix, est_mix)
        return Alignment(perm1=perm1, perm2=np.zeros(0, dtype=np.int64), cost=cost1)
    perm1, cost1 = match_columns(true_mix[0], est_mix[0])
    perm2, cost2 = match_columns(true_mix[1], est_mix[1])
    return Alignment(perm1=perm1, perm2=perm2, cost=cost1 + cost2)


def align_params(params: ModelParams, alignment: Alignment) -> ModelParams:
    """Permute blockmodel rows/columns and coefficient rows to the aligned labels"""
    perm2 = alignment.perm2 if len(alignment.perm2) else np.arange(params.k2)
    return ModelParams(b=params.b[np.ix_(alignment.perm1, perm2)], gamma=params.gamma.copy(),
                       beta1=params.beta1[alignment.perm1], beta2=params.beta2[perm2])


def membership_recovery(true_mix: np.ndarray, est_mix: np.ndarray) -> float:
    """
    Mean Pearson correlation of aligned membership columns.

    Zero-variance columns are skipped with a warning.

    Raises:
        EvaluationError: shapes differ or every column has zero variance
    """
    perm, _ = match_columns(true_mix, est_mix)
    aligned = np.asarray(est_mix)[:, perm]
    true_mix = np.asarray(true_mix)
    kept = []
    for k in range(true_mix.shape[1]):
        if np.std(true_mix[:, k]) == 0 or np.std(aligned[:, k]) == 0:
            logger.warning(f"Membership column {k} has zero variance; excluded from recovery")
            continue
        kept.append(float(np.corrcoef(true_mix[:, k], aligned[:, k])[0, 1]))
    if not kept:
        raise EvaluationError("every membership column has zero variance")
    return float(np.mean(kept))


def coefficient_bias(true_params: ModelParams, est_params: ModelParams, alignment: Alignment) -> Dict[str, np.ndarray]:
    """Estimated minus true coefficients after relabeling the estimate"""
    aligned = align_params(est_params, alignment)
    return {
        "b": aligned.b - true_params.b,
        "gamma": aligned.gamma - true_params.gamma,
        "beta1": aligned.beta1 - true_params.beta1,
        "beta2": aligned.beta2 - true_params.beta2,
    }


def se_calibration(estimates: np.ndarray, standard_errors: np.ndarray) -> np.ndarray:
    """
    Mean approximate SE over replicates divided by the empirical SD of the
    estimates, per coefficient. Values above 1 mean conservative SEs.

    Args:
        estimates, standard_errors: replicates x coefficients
    """
    estimates = np.asarray(estimates, dtype=np.float64).reshape(len(estimates), -1)
    standard_errors = np.asarray(standard_errors, dtype=np.float64).reshape(len(standard_errors), -1)
    if estimates.shape != standard_errors.shape or estimates.shape[0] < 2:
        raise EvaluationError("need matching estimate/SE tables with at least two replicates")
    return np.nanmean(standard_errors, axis=0) / np.std(estimates, axis=0, ddof=1)


@dataclass
class GofStatistic:
    """
    Frequency table of one network statistic.

    ``bins`` label the columns (np.inf for unreachable geodesics);
    ``observed`` is the observed network's frequency per bin and
    ``replicates`` one row per simulated network.
    """

    name: str
    bins: np.ndarray
    observed: np.ndarray
    replicates: np.ndarray

    def band(self, level: float = 0.9) -> Tuple[np.ndarray, np.ndarray]:
        tail = (1.0 - level) / 2.0
        return (np.quantile(self.replicates, tail, axis=0), np.quantile(self.replicates, 1.0 - tail, axis=0))

    def coverage(self, level: float = 0.9) -> float:
        """Share of occupied bins whose observed frequency lies inside the central replicate band"""
        low, high = self.band(level)
        occupied = (self.observed > 0) | (high > 0)
        if not occupied.any():
            return 1.0
        inside = (self.observed >= low) & (self.observed <= high)
        return float(inside[occupied].mean())

    def to_frame(self, level: float = 0.9) -> pd.DataFrame:
        low, high = self.band(level)
        return pd.DataFrame({"statistic": self.name, "bin": self.bins, "observed": self.observed,
                             "replicate_mean": self.replicates.mean(axis=0), "replicate_low": low,
                             "replicate_high": high})


@dataclass
class GofReport:
    """Observed and replicated degree, shared-partner and geodesic distributions"""

    degree_dist: Dict[str, GofStatistic]
    shared_partners: Dict[str, GofStatistic]
    geodesics: GofStatistic
    replicate_count: int

    def statistics(self) -> List[GofStatistic]:
        return [*self.degree_dist.values(), *self.shared_partners.values(), self.geodesics]


def degree_values(y: np.ndarray, family: int) -> np.ndarray:
    return y.sum(axis=1 if family == FAMILY1 else 0).astype(np.int64)


def shared_partner_values(y: np.ndarray, family: int) -> np.ndarray:
    """Shared-partner counts of every unordered pair of distinct nodes in one family"""
    y = y.astype(np.int64)
    counts = y @ y.T if family == FAMILY1 else y.T @ y
    return counts[np.triu_indices(counts.shape[0], k=1)]


def geodesic_values(y: np.ndarray) -> np.ndarray:
    """Shortest path lengths over all unordered node pairs of the bipartite graph (inf if unreachable)"""
    n1, n2 = y.shape
    block = sparse.csr_matrix(y.astype(np.float64))
    adjacency = sparse.bmat([[None, block], [block.T, None]], format="csr")
    distances = shortest_path(adjacency, method="D", directed=False, unweighted=True)
    return distances[np.triu_indices(n1 + n2, k=1)]


def _frequency(values: np.ndarray, bins: np.ndarray) -> np.ndarray:
    finite = np.isfinite(bins)
    table = np.zeros(len(bins))
    labels = bins[finite].astype(np.int64)
    counts = np.bincount(values[np.isfinite(values)].astype(np.int64), minlength=int(labels.max(initial=-1)) + 1)
    table[finite] = counts[labels] if len(counts) else 0.0
    table[~finite] = np.sum(~np.isfinite(values))
    return table


def _statistic(name: str, observed: np.ndarray, replicated: List[np.ndarray], with_inf: bool = False) -> GofStatistic:
    pooled = np.concatenate([observed, *replicated])
    finite = pooled[np.isfinite(pooled)]
    top = int(finite.max()) if finite.size else 0
    start = 1 if with_inf else 0
    bins = np.arange(start, top + 1, dtype=np.float64)
    if with_inf:
        bins = np.append(bins, np.inf)
    return GofStatistic(name=name, bins=bins, observed=_frequency(observed, bins),
                        replicates=np.array([_frequency(r, bins) for r in replicated]).reshape(len(replicated), -1))


def _network_statistics(y: np.ndarray) -> Dict[str, np.ndarray]:
    return {
        "degree_family1": degree_values(y, FAMILY1),
        "degree_family2": degree_values(y, FAMILY2),
        "shared_partners_family1": shared_partner_values(y, FAMILY1),
        "shared_partners_family2": shared_partner_values(y, FAMILY2),
        "geodesics": geodesic_values(y),
    }


def gof(net: BipartiteNetwork, fit_result: FitResult, replicates: int = 100, seed: int = 0,
        memberships: str = "posterior", threads: int = 1) -> GofReport:
    """
    Posterior predictive goodness of fit.

    Each replicate is simulated from the fitted hyperparameters on the
    observed covariates with its own substream. ``memberships="posterior"``
    holds the fitted mixed memberships fixed; ``"prior"`` redraws them from
    the fitted Dirichlet concentrations.
    """
    if replicates < 1:
        raise EvaluationError("at least one replicate is needed")
    if memberships not in ("posterior", "prior"):
        raise EvaluationError(f"unknown membership mode '{memberships}'")
    fixed = memberships == "posterior"

    def replicate(r: int) -> Dict[str, np.ndarray]:
        sim, _ = simulate_network(fit_result.params, net.n1, net.n2, x=net.x, w=net.w, d=net.d,
                                  pi=fit_result.pi_hat if fixed else None, psi=fit_result.psi_hat if fixed else None,
                                  rng=substream(seed, "gof", r))
        return _network_statistics(sim.y)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        replicated = list(pool.map(replicate, range(replicates)))
    observed = _network_statistics(net.y)
    stats = {name: _statistic(name, observed[name], [rep[name] for rep in replicated], with_inf=name == "geodesics")
             for name in observed}
    logger.info(f"Goodness of fit computed over {replicates} replicates")
    return GofReport(
        degree_dist={"family1": stats["degree_family1"], "family2": stats["degree_family2"]},
        shared_partners={"family1": stats["shared_partners_family1"], "family2": stats["shared_partners_family2"]},
        geodesics=stats["geodesics"],
        replicate_count=replicates,
    )


@dataclass
class SelectionResult:
    """Held-out AUROC per (K1, K2) cell and the chosen cell"""

    grid: pd.DataFrame
    best: Optional[Tuple[int, int]]
    fits: Dict[Tuple[int, int], FitResult] = field(default_factory=dict)


def select_k(net: BipartiteNetwork, k1_range: Sequence[int], k2_range: Sequence[int], config: FitConfig,
             priors: Optional[PriorSpec] = None, holdout: float = 0.2) -> SelectionResult:
    """
    Fit every (K1, K2) pair on the training dyads and score the held-out dyads.

    A holdout of ``holdout`` is drawn when the network has none. The best
    cell maximizes AUROC, ties going to the smaller K1 + K2, then the smaller
    K1. Failing cells are recorded with their error and a missing AUROC.
    """
    if net.holdout_mask is None:
        net = split_holdout(net, holdout, config.seed)
    rows, cols = net.heldout_dyads()
    labels = net.y[rows, cols]
    cells = [(k1, k2) for k1 in k1_range for k2 in k2_range]

    def run(cell: Tuple[int, int]):
        k1, k2 = cell
        cell_seed = int(substream(config.seed, "select_k", k1, k2).integers(2 ** 31))
        cell_config = replace(config, k1=k1, k2=k2, seed=cell_seed, compute_se=False)
        try:
            result = fit(net, cell_config, priors)
            score = auroc(predict_edges(net, result, (rows, cols)), labels)
            logger.info(f"K=({k1}, {k2}): held-out AUROC {score:.4f}")
            return result, score, ""
        except BiMMSBMError as e:
            logger.warning(f"K=({k1}, {k2}) failed: {e}")
            return None, float("nan"), str(e)

    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        outcomes = list(pool.map(run, cells))

    grid = pd.DataFrame({"k1": [c[0] for c in cells], "k2": [c[1] for c in cells],
                         "auroc": [o[1] for o in outcomes], "error": [o[2] for o in outcomes]})
    scored = [(score, -(k1 + k2), -k1, (k1, k2)) for (k1, k2), (_, score, _) in zip(cells, outcomes)
              if np.isfinite(score)]
    best = max(scored)[3] if scored else None
    if best is not None:
        logger.info(f"Selected K=({best[0]}, {best[1]})")
    fits = {cell: outcome[0] for cell, outcome in zip(cells, outcomes) if outcome[0] is not None}
    return SelectionResult(grid=grid, best=best, fits=fits)
