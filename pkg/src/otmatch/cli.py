"""
Command line interface.

Subcommands: ``solve``, ``match``, ``simulate``, ``diagnose`` and
``lalonde``. Exit codes are 0 on success, 1 for usage errors, 2 for I/O
and parse errors and 3 for numerical failures. ``OTMATCH_LOG`` (``error``,
``info`` or ``debug``) sets the stderr verbosity.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__, baselines, diagnostics, matching, simulation
from .divergences import parse_divergence
from .exceptions import InputError, NumericalError, OTMatchError
from .inference import bootstrap
from .measures import (LALONDE_STANDARDIZED, DiscreteMeasure, build_cost,
                       load_nsw, read_csv_dataset, read_points, standardize)
from .solver import SinkhornConfig, dual_objective, foc_residual, solve

SCHEMA = 1
EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 1, 2, 3

logger = logging.getLogger("otmatch")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _formatter(prog):
    return argparse.ArgumentDefaultsHelpFormatter(prog, max_help_position=32)


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}")


def _name_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _positive_float(text):
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError("must be a positive number")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _divergence(text):
    try:
        return parse_divergence(text)
    except InputError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _add_solver_args(p, divergence_default):
    p.add_argument("--epsilon", type=_positive_float, default=1e-3,
                   help="entropic regularization")
    p.add_argument("--divergence", type=_divergence, default=divergence_default,
                   help="marginal penalty: 'balanced' or 'kl:<rho>'")
    p.add_argument("--max-iter", type=_positive_int, default=10000,
                   help="maximum IPFP sweeps")
    p.add_argument("--tol", type=_positive_float, default=1e-9,
                   help="sup-norm potential change that stops the sweeps")


def _add_data_args(p):
    g = p.add_argument_group("data")
    g.add_argument("--data", help="CSV with a header row; omit to use --nsw")
    g.add_argument("--nsw", nargs="?", const="", default=None,
                   help="NSW text file (bundled copy when given without a path)")
    g.add_argument("--treatment-col", default="treat", help="treatment column of --data")
    g.add_argument("--outcome-col", default="re78", help="outcome column of --data")
    g.add_argument("--covariate-cols", type=_name_list, default=None,
                   help="comma-separated covariates (default: all other columns)")
    g.add_argument("--standardize", type=_name_list, default=None,
                   help="columns to z-score (NSW default: age,education,re75)")


def build_parser():
    parser = _Parser(prog="otmatch", formatter_class=_formatter,
                     description="Unbalanced entropic optimal transport matching")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=_positive_int, default=1,
                        help="worker cap; results do not depend on it")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("solve", formatter_class=_formatter,
                       help="solve a transport problem between point clouds")
    p.add_argument("points", nargs="+", help="two or more CSV point files")
    _add_solver_args(p, parse_divergence("balanced"))
    p.add_argument("--output", default="coupling.csv",
                   help="sparse triplet CSV of the coupling")
    p.add_argument("--summary", default=None,
                   help="JSON summary (default: output path with .json)")

    p = sub.add_parser("match", formatter_class=_formatter,
                       help="estimate a causal effect")
    _add_data_args(p)
    _add_solver_args(p, parse_divergence("kl:1"))
    p.add_argument("--method", default="ot",
                   help="ot, knn:<k>, ipw:<ht|hajek> or unadjusted")
    p.add_argument("--estimand", default="ate", help="ate, att or epo:<arm>")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--pairwise", dest="joint", action="store_false",
                      help="one two-marginal solve per pair of arms")
    mode.add_argument("--joint", dest="joint", action="store_true",
                      help="one multimarginal solve over all arms")
    p.set_defaults(joint=False)
    p.add_argument("--drop-threshold", type=float, default=matching.DEFAULT_DROP_THRESHOLD,
                   help="retained mass below this share of a uniform unit drops it")
    p.add_argument("--weighting", choices=("uniform", "mass"), default="uniform",
                   help="weights of retained units")
    _add_bootstrap_args(p)
    p.add_argument("--output", default=None, help="JSON result (default: stdout)")
    p.add_argument("--match-table", default=None,
                   help="CSV of per-unit matches (ot, binary, att/ate)")

    p = sub.add_parser("simulate", formatter_class=_formatter,
                       help="run the synthetic experiments")
    p.add_argument("--case", choices=("1", "2", "illustration"), default="1")
    p.add_argument("--methods", type=_name_list,
                   default=["ot", "knn1", "knn3", "ipw", "unadjusted"],
                   help="comma-separated subset of ot,knn<k>,ipw,unadjusted")
    p.add_argument("--eps", type=_float_list, default=[1e-3, 5e-3, 1e-2, 5e-2],
                   help="comma-separated OT penalties")
    p.add_argument("--divergence", type=_divergence, default=None,
                   help="OT marginal penalty (default kl:1; balanced for the illustration)")
    p.add_argument("--bootstrap", type=_positive_int, default=100,
                   help="bootstrap samples per replication")
    p.add_argument("--replications", type=_positive_int, default=1,
                   help="datasets drawn from the design")
    p.add_argument("--seed", type=int, required=True, help="master seed")
    p.add_argument("--tol", type=_positive_float, default=1e-6,
                   help="IPFP tolerance for the experiment solves")
    p.add_argument("--max-iter", type=_positive_int, default=100000,
                   help="IPFP sweep cap for the experiment solves")
    p.add_argument("--noise-is-sd", action="store_true",
                   help="read the 0.5 of the treated outcome noise as an sd")
    p.add_argument("--bootstrap-mode", choices=("stratified", "pooled"),
                   default="stratified")
    p.add_argument("--output", default=None, help="CSV result (default: stdout)")

    p = sub.add_parser("diagnose", formatter_class=_formatter,
                       help="covariate balance tests")
    _add_data_args(p)
    p.add_argument("--matched", action="store_true",
                   help="report the OT-matched arm-1 sample instead of the raw arms")
    _add_solver_args(p, parse_divergence("kl:1"))
    p.add_argument("--drop-threshold", type=float, default=matching.DEFAULT_DROP_THRESHOLD)
    p.add_argument("--output", default=None, help="CSV result (default: stdout)")

    p = sub.add_parser("lalonde", formatter_class=_formatter,
                       help="full NSW reproduction pipeline")
    p.add_argument("--nsw", default=None, help="NSW text file (default: bundled copy)")
    _add_solver_args(p, parse_divergence("kl:1"))
    p.add_argument("--methods", type=_name_list,
                   default=["ot", "ipw", "knn3", "knn1", "unadjusted"])
    p.add_argument("--bootstrap", type=int, default=0,
                   help="bootstrap replicates for standard errors (0 skips)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--output-dir", default=".", help="directory for the three tables")
    return parser


def _add_bootstrap_args(p):
    g = p.add_argument_group("bootstrap")
    g.add_argument("--bootstrap", type=int, default=0, help="replicates (0 skips)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--alpha", type=float, default=0.05)
    g.add_argument("--emit-replicates", action="store_true")
    g.add_argument("--bootstrap-mode", choices=("stratified", "pooled"),
                   default="stratified")


def _load(args):
    try:
        if args.data:
            data = read_csv_dataset(args.data, args.treatment_col, args.outcome_col,
                                    args.covariate_cols)
            std = args.standardize or []
        elif args.nsw is not None:
            data = load_nsw(args.nsw or None)
            if args.covariate_cols:
                data = data.select(args.covariate_cols)
            std = (args.standardize if args.standardize is not None
                   else [c for c in LALONDE_STANDARDIZED if c in data.columns])
        else:
            raise UsageError("one of --data or --nsw is required")
    except (OSError, InputError) as exc:
        raise DataError(str(exc)) from None
    if std:
        data, _ = standardize(data, std)
    return data


def _dump(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=False, allow_nan=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _cmd_solve(args):
    if len(args.points) < 2:
        raise UsageError("solve needs at least two point files")
    try:
        ms = [DiscreteMeasure(read_points(p)) for p in args.points]
    except (OSError, InputError) as exc:
        raise DataError(str(exc)) from None
    C = build_cost(ms)
    cfg = SinkhornConfig(args.epsilon, args.max_iter, args.tol)
    sol = solve(ms, C, args.epsilon, args.divergence, cfg)
    G = sol.coupling.values
    keep = np.argwhere(G >= 1e-12 * G.max()) if G.max() > 0 else np.empty((0, G.ndim), int)
    with open(args.output, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow([f"i{j + 1}" for j in range(G.ndim)] + ["mass"])
        for idx in keep:
            out.writerow([int(v) for v in idx] + [repr(float(G[tuple(idx)]))])
    summary = {
        "schema": SCHEMA,
        "epsilon": args.epsilon,
        "divergence": str(args.divergence),
        "iterations": sol.iterations,
        "converged": sol.converged,
        "residual": foc_residual(sol.potentials, C, ms, args.epsilon, args.divergence),
        "dual_value": dual_objective(sol.potentials, C, ms, args.epsilon, args.divergence),
        "total_mass": sol.coupling.total_mass,
        "marginal_errors": sol.marginal_errors,
        "entries": int(keep.shape[0]),
    }
    path = args.summary or os.path.splitext(args.output)[0] + ".json"
    _dump(summary, path)
    return 0


def _parse_method(text):
    text = text.strip().lower()
    if text in ("ot", "unadjusted"):
        return text, None
    if text.startswith("knn:") or (text.startswith("knn") and text[3:].isdigit()):
        try:
            return "knn", int(text.split(":")[-1] if ":" in text else text[3:])
        except ValueError:
            pass
    if text.startswith("ipw"):
        return "ipw", text.split(":", 1)[1] if ":" in text else "ht"
    raise UsageError(f"unknown method {text!r}")


def _parse_estimand(text):
    text = text.strip().lower()
    if text in ("ate", "att"):
        return text, None
    if text.startswith("epo:"):
        try:
            return "epo", int(text[4:])
        except ValueError:
            pass
    raise UsageError(f"unknown estimand {text!r}")


def _estimator(args, method, estimand):
    name, param = method
    kind, arm = estimand
    cfg = SinkhornConfig(args.epsilon, args.max_iter, args.tol)

    def run(data):
        if name == "ot":
            if args.joint:
                cp, _ = matching.joint_coupling(data, args.epsilon, args.divergence, cfg)
            else:
                cp, _ = matching.pairwise_couplings(data, args.epsilon, args.divergence, cfg)
            if kind == "att":
                return matching.att(data, cp, drop_threshold=args.drop_threshold,
                                    weighting=args.weighting)
            if kind == "epo":
                return matching.expected_potential_outcome(
                    data, cp, arm, args.drop_threshold, args.weighting)
            return matching.ate(data, cp, args.drop_threshold, args.weighting)
        if kind == "epo":
            raise UsageError("epo estimands are available for --method ot only")
        if name == "knn":
            a, t = baselines.knn_estimates(data, param)
        elif name == "ipw":
            a, t = baselines.ipw_estimates(data, baselines.fit_propensity(data), param)
        else:
            v = baselines.unadjusted(data)
            if kind == "att":
                raise UsageError("the unadjusted method estimates the ATE only")
            return matching.CausalEstimate("ate", v, tuple(data.arm_sizes()))
        return t if kind == "att" else a

    return run


def _cmd_match(args):
    data = _load(args)
    method = _parse_method(args.method)
    estimand = _parse_estimand(args.estimand)
    if method[0] != "ot" and data.n_arms != 2:
        raise UsageError("baseline methods need a binary treatment")
    run = _estimator(args, method, estimand)
    est = run(data)
    if args.bootstrap:
        if args.bootstrap < 2:
            raise UsageError("--bootstrap needs at least 2 replicates")
        summ = bootstrap(data, lambda d: run(d).point, args.bootstrap, args.seed,
                         args.alpha, args.bootstrap_mode)
        est.sd, est.interval = summ.sd, summ.interval
        est.replicates, est.n_failed = summ.replicates, summ.n_failed
    out = {"schema": SCHEMA, "method": args.method, "epsilon": args.epsilon,
           "divergence": str(args.divergence), "drop_threshold": args.drop_threshold,
           "estimate": est.to_dict(args.emit_replicates)}
    if args.bootstrap:
        out["bootstrap"] = {"B": args.bootstrap, "seed": args.seed, "alpha": args.alpha,
                            "mode": args.bootstrap_mode}
    if args.match_table:
        if method[0] != "ot" or data.n_arms != 2:
            raise UsageError("--match-table needs --method ot on a binary dataset")
        _write_match_table(args, data)
    _dump(out, args.output)
    return 0


def _write_match_table(args, data):
    cfg = SinkhornConfig(args.epsilon, args.max_iter, args.tol)
    cp, _ = matching.pairwise_couplings(data, args.epsilon, args.divergence, cfg)
    ids = [np.flatnonzero(data.treatment == a) for a in (0, 1)]
    with open(args.match_table, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["unit", "arm", "matched_ids", "weights", "retained_mass", "dropped"])
        for src, dst in ((1, 0), (0, 1)):
            W = matching.conditional_weights(cp[(0, 1)], src, dst, args.drop_threshold)
            for i, unit in enumerate(ids[src]):
                nz = np.flatnonzero(W.matrix[i] >= 1e-12)
                out.writerow([int(unit), src,
                              " ".join(str(int(ids[dst][k])) for k in nz),
                              " ".join(f"{W.matrix[i, k]:.6g}" for k in nz),
                              repr(float(W.retained_mass[i])), int(W.dropped[i])])


def _fmt(v):
    return "NA" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _cmd_simulate(args):
    if args.case == "illustration":
        rows = simulation.run_illustration(args.eps, args.seed, args.divergence,
                                           max_iterations=args.max_iter)
        header = ["epsilon", "divergence", "iterations", "converged",
                  "marginal_error_0", "marginal_error_1", "marginal_error_2", "seed"]
        lines = [[_fmt(r.epsilon), r.divergence, r.iterations, int(r.converged)]
                 + [_fmt(v) for v in r.marginal_errors] + [r.seed] for r in rows]
    else:
        rows = simulation.run_case(int(args.case), args.methods, args.eps, args.bootstrap,
                                   args.replications, args.seed, args.divergence,
                                   tolerance=args.tol, max_iterations=args.max_iter,
                                   noise_is_sd=args.noise_is_sd, mode=args.bootstrap_mode)
        header = ["method", "epsilon", "ATE_diff", "ATT_diff", "ATT_sd_diff",
                  "replications", "seed", "failures"]
        lines = [[r.method, _fmt(r.epsilon), _fmt(r.ATE_diff), _fmt(r.ATT_diff),
                  _fmt(r.ATT_sd_diff), r.replications, r.seed, r.failures] for r in rows]
    _write_rows(header, lines, args.output)
    return 0


def _write_rows(header, lines, path):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        out.writerows(lines)
    finally:
        if path:
            fh.close()


def _cmd_diagnose(args):
    data = _load(args)
    weights = None
    if args.matched:
        cfg = SinkhornConfig(args.epsilon, args.max_iter, args.tol)
        cp, _ = matching.pairwise_couplings(data, args.epsilon, args.divergence, cfg)
        W = matching.conditional_weights(cp[(0, 1)], 0, 1, args.drop_threshold)
        weights = diagnostics.matched_weights(W)
    rows = diagnostics.balance_report(data, weights)
    lines = [[r.covariate] + [f"{v:.4f}" for v in r.as_tuple()[1:]] for r in rows]
    _write_rows(list(diagnostics.BALANCE_HEADER), lines, args.output)
    return 0


def lalonde_pipeline(path=None, eps=1e-3, divergence=None, methods=None,
                     B=0, seed=0, alpha=0.05, max_iter=10000, tol=1e-9):
    """Summary statistics, effect estimates and balance tables for the NSW data.

    Returns
    -------
    dict
        ``sumstats`` rows ``(variable, treated mean, control mean)``,
        ``estimates`` rows ``(method, ATE, ATT, ATE sd, ATT sd)`` and
        ``balance`` with ``before`` and ``after`` lists of BalanceRow.
    """
    divergence = parse_divergence("kl:1") if divergence is None else divergence
    methods = methods or ["ot", "ipw", "knn3", "knn1", "unadjusted"]
    raw = load_nsw(path)
    if raw.arm_sizes().shape[0] != 2:
        raise InputError("NSW data must have a binary treatment")
    t = raw.treatment
    sumstats = [("N", float(np.sum(t == 1)), float(np.sum(t == 0)))]
    for c in raw.columns + ("re78",):
        x = raw.outcome if c == "re78" else raw.column(c)
        sumstats.append((c, float(x[t == 1].mean()), float(x[t == 0].mean())))
    data, _ = standardize(raw, LALONDE_STANDARDIZED)
    cfg = SinkhornConfig(eps, max_iter, tol)

    def estimates(d, name):
        if name == "ot":
            cp, _ = matching.pairwise_couplings(d, eps, divergence, cfg)
            return matching.ate(d, cp).point, matching.att(d, cp).point
        if name.startswith("knn"):
            a, b = baselines.knn_estimates(d, int(name[3:].lstrip(":")))
            return a.point, b.point
        if name.startswith("ipw"):
            style = name.split(":", 1)[1] if ":" in name else "ht"
            a, b = baselines.ipw_estimates(d, baselines.fit_propensity(d), style)
            return a.point, b.point
        if name == "unadjusted":
            return baselines.unadjusted(d), math.nan
        raise InputError(f"unknown method {name!r}")

    table = []
    for name in methods:
        a, b = estimates(data, name)
        sa = sb = math.nan
        if B:
            sa = bootstrap(data, lambda d: estimates(d, name)[0], B, seed, alpha).sd
            if not math.isnan(b):
                sb = bootstrap(data, lambda d: estimates(d, name)[1], B, seed, alpha).sd
        table.append((name, a, b, sa, sb))
    names = [c + "_std" if c in LALONDE_STANDARDIZED else c for c in data.columns]
    before = diagnostics.balance_report(data, None, names=names)
    cp, _ = matching.pairwise_couplings(data, eps, divergence, cfg)
    W = matching.conditional_weights(cp[(0, 1)], 0, 1)
    after = diagnostics.balance_report(data, diagnostics.matched_weights(W), names=names)
    return {"sumstats": sumstats, "estimates": table,
            "balance": {"before": before, "after": after}}


def _cmd_lalonde(args):
    try:
        res = lalonde_pipeline(args.nsw, args.epsilon, args.divergence, args.methods,
                               args.bootstrap, args.seed, args.alpha, args.max_iter, args.tol)
    except OSError as exc:
        raise DataError(str(exc)) from None
    os.makedirs(args.output_dir, exist_ok=True)
    d = args.output_dir
    _write_rows(["variable", "treated_mean", "control_mean"],
                [[n, f"{a:.2f}", f"{b:.2f}"] for n, a, b in res["sumstats"]],
                os.path.join(d, "lalonde_sumstats.csv"))
    _write_rows(["method", "ATE", "ATT", "ATE_sd", "ATT_sd"],
                [[m, _fmt(a), _fmt(b), _fmt(sa), _fmt(sb)]
                 for m, a, b, sa, sb in res["estimates"]],
                os.path.join(d, "lalonde_estimates.csv"))
    for key in ("before", "after"):
        diagnostics.write_balance_csv(res["balance"][key],
                                      os.path.join(d, f"lalonde_balance_{key}.csv"))
    _dump({"schema": SCHEMA, "epsilon": args.epsilon, "divergence": str(args.divergence),
           "estimates": {m: {"ATE": a, "ATT": None if math.isnan(b) else b}
                         for m, a, b, _, _ in res["estimates"]}}, None)
    return 0


COMMANDS = {"solve": _cmd_solve, "match": _cmd_match, "simulate": _cmd_simulate,
            "diagnose": _cmd_diagnose, "lalonde": _cmd_lalonde}


def _configure_logging():
    level = os.environ.get("OTMATCH_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), stream=sys.stderr,
                        format="otmatch: %(levelname)s: %(message)s", force=True)


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"otmatch: usage error: {exc}\n")
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        sys.stderr.write(f"otmatch: i/o error: {exc}\n")
        return EXIT_IO
    except NumericalError as exc:
        sys.stderr.write(f"otmatch: numerical error: {exc}\n")
        return EXIT_NUMERIC
    except OTMatchError as exc:
        sys.stderr.write(f"otmatch: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
