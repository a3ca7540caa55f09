"""
Command-line front end: fit, simulate, select-k, predict and gof
"""

import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import __version__
from .bigraph import BipartiteNetwork, load_network, save_network, split_holdout
from .evaluation import auroc, gof, predict_edges, score_dyads, select_k
from .exceptions import BiMMSBMError, ConfigError, DivergenceError, EvaluationError
from .manifest import RunManifest
from .model import ModelParams, PriorSpec, load_params, save_params
from .simulate import save_truth, scenario, simulate_network
from .svi import FitConfig, FitResult, fit

logger = logging.getLogger("bimmsbm.cli")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
MEMBERSHIP_FILES = ("memberships_family1.csv", "memberships_family2.csv")


class UsageError(Exception):
    """Raised by the parser instead of exiting with argparse's status 2"""


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def configure_logging() -> None:
    """Root logging from BIMMSBM_LOG (a level name, default WARNING)"""
    level_name = os.environ.get("BIMMSBM_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)
    logging.getLogger("bimmsbm").setLevel(level)


def parse_range(text: str) -> List[int]:
    """``"1..3"`` -> [1, 2, 3]; ``"2,4"`` -> [2, 4]; ``"2"`` -> [2]"""
    try:
        if ".." in text:
            low, high = text.split("..", 1)
            values = list(range(int(low), int(high) + 1))
        else:
            values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid group range '{text}'")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"invalid group range '{text}'")
    return values


def _add_network_args(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--edges", required=required, help="edge CSV: family1_id,family2_id,y")
    parser.add_argument("--x1", help="family-1 covariate CSV: id,<cov>...")
    parser.add_argument("--x2", help="family-2 covariate CSV: id,<cov>...")
    parser.add_argument("--dyadic", help="dyadic covariate CSV: family1_id,family2_id,<cov>...")


def _add_fit_args(parser: argparse.ArgumentParser) -> None:
    defaults = FitConfig()
    parser.add_argument("--seed", type=int, default=defaults.seed)
    parser.add_argument("--tau", type=float, default=defaults.tau)
    parser.add_argument("--kappa", type=float, default=defaults.kappa)
    parser.add_argument("--m-sets", type=int, default=defaults.m_sets)
    parser.add_argument("--max-iter", type=int, default=defaults.max_iter)
    parser.add_argument("--tol", type=float, default=defaults.conv_tol)
    parser.add_argument("--batch", action="store_true", help="batch variational EM instead of subsampling")
    parser.add_argument("--se-samples", type=int, default=defaults.se_samples)
    parser.add_argument("--no-se", action="store_true", help="skip standard errors")
    parser.add_argument("--threads", type=int, default=defaults.threads)
    parser.add_argument("--out-dir", default=".")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="bimmsbm", description="Bipartite mixed-membership blockmodel estimation")
    parser.add_argument("--version", action="version", version=f"bimmsbm {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p_fit = commands.add_parser("fit", help="fit the model to a network")
    _add_network_args(p_fit)
    p_fit.add_argument("--k1", type=int, required=True)
    p_fit.add_argument("--k2", type=int, required=True)
    p_fit.add_argument("--holdout", type=float, help="fraction of dyads held out and scored by AUROC")
    _add_fit_args(p_fit)

    p_sim = commands.add_parser("simulate", help="simulate a network")
    source = p_sim.add_mutually_exclusive_group(required=True)
    source.add_argument("--scenario", help="easy, medium or hard")
    source.add_argument("--params", help="parameter JSON (e.g. a fit.json)")
    p_sim.add_argument("--size", default="small", help="small or large")
    p_sim.add_argument("--n1", type=int)
    p_sim.add_argument("--n2", type=int)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out-dir", default=".")

    p_sel = commands.add_parser("select-k", help="choose (K1, K2) by held-out AUROC")
    _add_network_args(p_sel)
    p_sel.add_argument("--k1", type=parse_range, required=True, help="e.g. 1..3")
    p_sel.add_argument("--k2", type=parse_range, required=True, help="e.g. 1..3")
    p_sel.add_argument("--holdout", type=float, default=0.2)
    _add_fit_args(p_sel)

    p_pred = commands.add_parser("predict", help="score dyads with a fitted model")
    p_pred.add_argument("--fit", required=True, help="fit.json written by 'fit'")
    p_pred.add_argument("--dyads", required=True, help="CSV: family1_id,family2_id[,<dyadic cov>...]")
    p_pred.add_argument("--memberships1", help="family-1 memberships (default: next to --fit)")
    p_pred.add_argument("--memberships2", help="family-2 memberships (default: next to --fit)")
    p_pred.add_argument("--out-dir", default=".")

    p_gof = commands.add_parser("gof", help="posterior predictive goodness of fit")
    p_gof.add_argument("--fit", required=True, help="fit.json written by 'fit'")
    _add_network_args(p_gof)
    p_gof.add_argument("--replicates", type=int, default=100)
    p_gof.add_argument("--seed", type=int, default=0)
    p_gof.add_argument("--threads", type=int, default=1)
    p_gof.add_argument("--memberships1")
    p_gof.add_argument("--memberships2")
    p_gof.add_argument("--out-dir", default=".")
    return parser


def _config_from_args(args, k1: int, k2: int) -> FitConfig:
    return FitConfig(k1=k1, k2=k2, tau=args.tau, kappa=args.kappa, m_sets=args.m_sets, max_iter=args.max_iter,
                     conv_tol=args.tol, seed=args.seed, batch_mode=args.batch, se_samples=args.se_samples,
                     compute_se=not args.no_se, threads=args.threads)


def _load_inputs(args, manifest: RunManifest) -> BipartiteNetwork:
    for path in (args.edges, args.x1, args.x2, args.dyadic):
        manifest.add_input(path)
    return load_network(args.edges, args.x1, args.x2, args.dyadic)


def _write_memberships(path: str, ids: Sequence[str], mix: np.ndarray) -> str:
    frame = pd.DataFrame(mix, columns=[f"group{g + 1}" for g in range(mix.shape[1])])
    frame.insert(0, "id", list(ids))
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def _read_memberships(path: str, ids: Optional[Sequence[str]] = None) -> Tuple[Tuple[str, ...], np.ndarray]:
    if not os.path.exists(path):
        raise ConfigError(f"membership file not found: {path}")
    frame = pd.read_csv(path, dtype={"id": str}, keep_default_na=False)
    if ids is not None:
        frame = frame.set_index("id")
        missing = [i for i in ids if i not in frame.index]
        if missing:
            raise EvaluationError(f"unknown node '{missing[0]}' in {path}")
        frame = frame.loc[list(ids)].reset_index()
    return tuple(frame["id"]), frame.drop(columns="id").to_numpy(dtype=np.float64)


def _membership_paths(args) -> Tuple[str, str]:
    base = os.path.dirname(os.path.abspath(args.fit))
    return (args.memberships1 or os.path.join(base, MEMBERSHIP_FILES[0]),
            args.memberships2 or os.path.join(base, MEMBERSHIP_FILES[1]))


def cmd_fit(args) -> int:
    manifest = RunManifest(command="fit", seed=args.seed, version=__version__)
    net = _load_inputs(args, manifest)
    if args.holdout is not None:
        net = split_holdout(net, args.holdout, args.seed)
    config = _config_from_args(args, args.k1, args.k2)
    manifest.config = config.to_dict()
    result = fit(net, config)

    os.makedirs(args.out_dir, exist_ok=True)
    extra = {"iterations": result.iterations, "converged": result.converged,
             "elbo": result.elbo_trace[-1] if result.elbo_trace else None,
             "x1_names": list(net.x_names), "x2_names": list(net.w_names), "dyadic_names": list(net.d_names)}
    if result.se is not None:
        extra["se"] = result.se.to_dict()
    if args.holdout is not None:
        extra["holdout_auroc"] = _holdout_auroc(net, result)
    outputs = [
        save_params(os.path.join(args.out_dir, "fit.json"), result.params, result.priors, extra),
        _write_memberships(os.path.join(args.out_dir, MEMBERSHIP_FILES[0]), net.ids1, result.pi_hat),
        _write_memberships(os.path.join(args.out_dir, MEMBERSHIP_FILES[1]), net.ids2, result.psi_hat),
    ]
    trace_path = os.path.join(args.out_dir, "elbo_trace.csv")
    pd.DataFrame({"iteration": np.arange(1, len(result.elbo_trace) + 1), "elbo": result.elbo_trace}).to_csv(
        trace_path, index=False, float_format="%.17g")
    outputs.append(trace_path)
    for path in outputs:
        manifest.add_output(path)
    manifest.save(args.out_dir)
    logger.info(f"Wrote fit outputs to {args.out_dir}")
    return 0


def _holdout_auroc(net: BipartiteNetwork, result: FitResult) -> Optional[float]:
    rows, cols = net.heldout_dyads()
    try:
        return auroc(predict_edges(net, result, (rows, cols)), net.y[rows, cols])
    except EvaluationError as e:
        logger.warning(f"Held-out AUROC unavailable: {e}")
        return None


def cmd_simulate(args) -> int:
    manifest = RunManifest(command="simulate", seed=args.seed, version=__version__)
    if args.scenario:
        spec = scenario(args.scenario, args.size)
        source = spec
        manifest.config = {"scenario": spec.name, "size": args.size}
    else:
        manifest.add_input(args.params)
        source, _, _ = load_params(args.params)
        if args.n1 is None or args.n2 is None:
            raise ConfigError("--n1 and --n2 are required with --params")
        manifest.config = {"params": args.params}
    net, truth = simulate_network(source, args.n1, args.n2, seed=args.seed)
    manifest.config.update({"n1": net.n1, "n2": net.n2})
    paths = save_network(net, args.out_dir)
    paths["truth"] = save_truth(os.path.join(args.out_dir, "truth.json"), truth)
    for path in paths.values():
        manifest.add_output(path)
    manifest.save(args.out_dir)
    logger.info(f"Simulated {net.n1} x {net.n2} network into {args.out_dir}")
    return 0


def cmd_select_k(args) -> int:
    manifest = RunManifest(command="select-k", seed=args.seed, version=__version__)
    net = _load_inputs(args, manifest)
    config = _config_from_args(args, args.k1[0], args.k2[0])
    manifest.config = {**config.to_dict(), "k1_range": args.k1, "k2_range": args.k2, "holdout": args.holdout}
    selection = select_k(net, args.k1, args.k2, config, holdout=args.holdout)
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "select_k.csv")
    selection.grid.to_csv(path, index=False, float_format="%.17g")
    manifest.add_output(path)
    manifest.save(args.out_dir)
    if selection.best is None:
        raise EvaluationError("every (K1, K2) cell failed")
    print(f"K1={selection.best[0]} K2={selection.best[1]}")
    return 0


def cmd_predict(args) -> int:
    manifest = RunManifest(command="predict", version=__version__)
    path1, path2 = _membership_paths(args)
    for path in (args.fit, path1, path2, args.dyads):
        manifest.add_input(path)
    params, _, _ = load_params(args.fit)
    ids1, pi_hat = _read_memberships(path1)
    ids2, psi_hat = _read_memberships(path2)
    index1 = {node: i for i, node in enumerate(ids1)}
    index2 = {node: i for i, node in enumerate(ids2)}

    dyads = pd.read_csv(args.dyads, dtype={"family1_id": str, "family2_id": str}, keep_default_na=False)
    for a, b in zip(dyads["family1_id"], dyads["family2_id"]):
        if a not in index1 or b not in index2:
            raise EvaluationError(f"unknown node in dyad ({a}, {b})")
    rows = np.array([index1[a] for a in dyads["family1_id"]], dtype=np.int64)
    cols = np.array([index2[b] for b in dyads["family2_id"]], dtype=np.int64)
    covariates = [c for c in dyads.columns if c not in ("family1_id", "family2_id", "y")]
    d = dyads[covariates].to_numpy(dtype=np.float64) if covariates else np.zeros((len(dyads), 0))
    if d.shape[1] != params.gamma.size:
        if d.shape[1] == 0:
            d = np.zeros((len(dyads), params.gamma.size))
        else:
            raise ConfigError(f"dyad file has {d.shape[1]} covariates, the fit expects {params.gamma.size}")

    scores = score_dyads(params, pi_hat[rows], psi_hat[cols], d)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "predictions.csv")
    pd.DataFrame({"family1_id": dyads["family1_id"], "family2_id": dyads["family2_id"], "score": scores}).to_csv(
        out, index=False, float_format="%.17g")
    manifest.add_output(out)
    manifest.save(args.out_dir)
    return 0


def cmd_gof(args) -> int:
    manifest = RunManifest(command="gof", seed=args.seed, version=__version__)
    net = _load_inputs(args, manifest)
    manifest.add_input(args.fit)
    params, priors, _ = load_params(args.fit)
    path1, path2 = _membership_paths(args)
    _, pi_hat = _read_memberships(path1, net.ids1)
    _, psi_hat = _read_memberships(path2, net.ids2)
    result = FitResult(params=params, pi_hat=pi_hat, psi_hat=psi_hat, priors=priors)
    manifest.config = {"replicates": args.replicates}
    report = gof(net, result, args.replicates, args.seed, threads=args.threads)

    os.makedirs(args.out_dir, exist_ok=True)
    tables = {
        "gof_degree.csv": pd.concat([s.to_frame() for s in report.degree_dist.values()], ignore_index=True),
        "gof_shared_partners.csv": pd.concat([s.to_frame() for s in report.shared_partners.values()],
                                             ignore_index=True),
        "gof_geodesics.csv": report.geodesics.to_frame(),
    }
    for name, frame in tables.items():
        path = os.path.join(args.out_dir, name)
        frame.to_csv(path, index=False, float_format="%.17g")
        manifest.add_output(path)
    manifest.save(args.out_dir)
    return 0


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "select-k": cmd_select_k, "predict": cmd_predict,
            "gof": cmd_gof}


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; 0 on success, 1 on invalid input, 2 on fit divergence"""
    configure_logging()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as e:
        print(f"error: {e.message} (iteration {e.iteration})", file=sys.stderr)
        return 2
    except BiMMSBMError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
