"""Command-line interface.

Every command is a thin wrapper over library calls and writes a JSON run
manifest next to its main output. ``causalsurv rerun MANIFEST`` replays the
recorded arguments, reproducing the outputs byte for byte.

Exit codes: 0 success, 2 usage / input / dimension errors, 3 fit errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
import warnings

import numpy as np

from . import __version__
from .blp import best_linear_projection, compute_gamma
from .csf import fit_csf, fit_ipcw_cf
from .data import diagnose, fmt_float, load_csv, save_csv, truncate_and_recode
from .errors import CausalSurvError, FitError, ParseError, SchemaError
from .forest import CSF_DEFAULTS, NUISANCE_DEFAULTS
from .io import load_model, load_model_document, save_model
from .nuisance import assemble_nuisances
from .sim import DgpSpec, generate
from .sim.bench import METHODS, coverage_experiment, coverage_points, run_benchmark

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FIT = 3


class UsageError(CausalSurvError, ValueError):
    """Bad flags or inputs detected after argument parsing."""


# ---------------------------------------------------------------------------
# helpers


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _name_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _load_dataset(args):
    x_cols = _name_list(args.x_cols) if getattr(args, "x_cols", None) else None
    ds = load_csv(args.data, u_col=args.u_col, delta_col=args.delta_col, w_col=args.w_col, x_cols=x_cols)
    if getattr(args, "tmax", None) is not None:
        ds = truncate_and_recode(ds, args.tmax)
    return ds


def _forest_configs(args):
    cfg = CSF_DEFAULTS.with_(seed=args.seed)
    if args.trees is not None:
        cfg = cfg.with_(num_trees=args.trees)
    if args.min_node is not None:
        cfg = cfg.with_(min_node_size=args.min_node)
    if args.mtry is not None:
        cfg = cfg.with_(mtry=args.mtry)
    if args.ci_group is not None:
        cfg = cfg.with_(ci_group_size=args.ci_group)
    ncfg = NUISANCE_DEFAULTS.with_(seed=args.seed)
    if args.nuisance_trees is not None:
        ncfg = ncfg.with_(num_trees=args.nuisance_trees)
    for c in (cfg, ncfg):
        try:
            c.validate()
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return cfg, ncfg


def _query_matrix(path, feature_names, p):
    """Feature matrix from a query CSV: named columns when present, else all columns."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: file is empty (no header row)") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    if feature_names and all(f in header for f in feature_names):
        cols = [header.index(f) for f in feature_names]
    elif len(header) == p:
        cols = list(range(p))
    else:
        raise UsageError(f"query has columns {header}; the model expects {p} features"
                         + (f" named {list(feature_names)}" if feature_names else ""))
    X = np.empty((len(rows), len(cols)))
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"row {i}: expected {len(header)} fields, got {len(row)}", i)
        try:
            X[i - 1] = [float(row[j]) for j in cols]
        except ValueError:
            raise ParseError(f"row {i}: non-numeric cell", i) from None
    if not np.all(np.isfinite(X)):
        raise ParseError("query contains missing or non-finite values")
    return X


# ---------------------------------------------------------------------------
# commands; each returns (outputs, extra manifest fields)


def cmd_simulate(args):
    ds, tau, _ = generate(DgpSpec(args.setting, args.n, p=args.p, seed=args.seed))
    save_csv(ds, args.out, extra={"tau_true": tau})
    return [args.out], {}


def cmd_fit(args):
    ds = _load_dataset(args)
    cfg, ncfg = _forest_configs(args)
    fit = fit_csf if args.method == "csf" else fit_ipcw_cf
    nuisances = assemble_nuisances(ds, ncfg, threads=args.threads)
    model = fit(ds, cfg, nuisance_config=ncfg, nuisances=nuisances, threads=args.threads)
    save_model(model, args.out, compact=args.compact, feature_names=ds.feature_names)
    diag_path = args.diagnostics or args.out + ".diagnostics.json"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = diagnose(ds, nuisances)
    _write_json(diag_path, report.to_dict())
    return [args.out, diag_path], {"config": cfg.to_dict(), "nuisance_config": ncfg.to_dict()}


def cmd_predict(args):
    doc = load_model_document(args.model)
    model = load_model(args.model)
    if args.oob:
        if args.data is not None:
            X = _query_matrix(args.data, doc.get("feature_names"), model.p)
            if X.shape[0] != model.forest.n:
                raise UsageError(f"--oob needs the {model.forest.n} training rows, query has {X.shape[0]}")
        pred = model.predict(oob=True, variance=args.level is not None, debias=args.debias)
    else:
        if args.data is None:
            raise UsageError("--data is required unless --oob is given")
        X = _query_matrix(args.data, doc.get("feature_names"), model.p)
        pred = model.predict(X, variance=args.level is not None, debias=args.debias)
    header = ["tau_hat"]
    cols = [pred.tau_hat]
    if args.level is not None:
        lo, hi = pred.interval(args.level)
        header += ["sigma_hat", "lower", "upper"]
        cols += [pred.sigma_hat, lo, hi]
    _write_rows(args.out, header, zip(*[c.tolist() for c in cols]))
    return [args.out], {}


def cmd_blp(args):
    model = load_model(args.model)
    ds = _load_dataset(args)
    if ds.n != model.forest.n:
        raise UsageError(f"data has {ds.n} rows; the model was trained on {model.forest.n}")
    names = _name_list(args.covariates)
    missing = [c for c in names if c not in ds.feature_names]
    if missing:
        raise UsageError(f"unknown covariate column(s): {missing}")
    A = ds.x[:, [ds.feature_names.index(c) for c in names]] if names else None
    res = best_linear_projection(compute_gamma(model, ds), A, hc=args.hc, names=names)
    _write_rows(args.out, ["term", "estimate", "std_err", "t_value", "p_value"], res.table())
    return [args.out], {}


def cmd_benchmark(args):
    os.makedirs(args.out_dir, exist_ok=True)
    cfg = CSF_DEFAULTS if args.trees is None else CSF_DEFAULTS.with_(num_trees=args.trees)
    ncfg = NUISANCE_DEFAULTS if args.nuisance_trees is None else NUISANCE_DEFAULTS.with_(
        num_trees=args.nuisance_trees)
    for m in args.methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    res = run_benchmark(args.settings, tuple(args.methods), n=args.n, reps=args.reps, seed=args.seed,
                        n_test=args.n_test, csf_config=cfg, nuisance_config=ncfg, threads=args.threads,
                        scatter_reps=1, progress=log)
    paths = [os.path.join(args.out_dir, f) for f in ("tables.csv", "raw.csv", "scatter.csv")]
    res.write_tables(paths[0])
    res.write_raw(paths[1])
    res.write_scatter(paths[2])
    fails = [{"setting": r.setting, "rep": r.rep, "method": r.method, "error": r.error} for r in res.failures()]
    return paths, {"failures": fails}


def cmd_coverage(args):
    if args.points == "default":
        pts = coverage_points(args.p)
    else:
        vals = [float(v) for v in _name_list(args.points)]
        pts = coverage_points(args.p, vals)
    res = coverage_experiment(args.setting, pts, reps=args.reps, num_trees=args.trees, n=args.n,
                              seed=args.seed, level=args.level, threads=args.threads,
                              debias=args.debias)
    res.write(args.out)
    return [args.out], {"failures": [{"rep": r, "error": e} for r, e in res.failures]}


def cmd_diagnose(args):
    ds = _load_dataset(args)
    ncfg = NUISANCE_DEFAULTS.with_(seed=args.seed)
    if args.nuisance_trees is not None:
        ncfg = ncfg.with_(num_trees=args.nuisance_trees)
    nuisances = assemble_nuisances(ds, ncfg, threads=args.threads)
    report = diagnose(ds, nuisances)
    _write_json(args.out, report.to_dict())
    return [args.out], {}


# ---------------------------------------------------------------------------
# parser


def _add_data_flags(p, tmax=True):
    p.add_argument("--data", required=True, help="input CSV")
    p.add_argument("--u-col", default="u")
    p.add_argument("--delta-col", default="delta")
    p.add_argument("--w-col", default="w")
    p.add_argument("--x-cols", default=None, help="comma-separated feature columns (default: all others)")
    if tmax:
        p.add_argument("--tmax", type=float, default=None, help="truncate and recode at this horizon")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalsurv", description="Causal survival forests.")
    parser.add_argument("--version", action="version", version=f"causalsurv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (0 = all cores; default from CAUSALSURV_THREADS)")
        p.add_argument("--manifest", default=None, help="manifest path (default: <output>.manifest.json)")
        return p

    p = command("simulate", cmd_simulate, "draw a synthetic dataset")
    p.add_argument("--setting", type=int, required=True, choices=[1, 2, 3, 4])
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--p", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = command("fit", cmd_fit, "fit a causal survival forest")
    _add_data_flags(p)
    p.add_argument("--method", choices=["csf", "ipcw"], default="csf")
    p.add_argument("--trees", type=int, default=None)
    p.add_argument("--nuisance-trees", type=int, default=None)
    p.add_argument("--min-node", type=int, default=None)
    p.add_argument("--mtry", type=int, default=None)
    p.add_argument("--ci-group", type=int, default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--compact", action="store_true", help="omit nuisance curves from the model file")
    p.add_argument("--diagnostics", default=None, help="diagnostics JSON path")
    p.add_argument("--out", required=True, help="model JSON path")

    p = command("predict", cmd_predict, "predict CATEs from a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=None, help="query CSV")
    p.add_argument("--oob", action="store_true", help="out-of-bag predictions for the training rows")
    p.add_argument("--level", type=float, default=None, help="add confidence intervals at this level")
    p.add_argument("--debias", default="bayes", choices=["bayes", "floor"],
                   help="little-bags variance: posterior mean (bayes) or raw difference clipped at 0 (floor)")
    p.add_argument("--out", required=True)

    p = command("blp", cmd_blp, "best linear projection of the CATE")
    p.add_argument("--model", required=True)
    _add_data_flags(p)
    p.add_argument("--covariates", default="", help="comma-separated columns (empty: average effect only)")
    p.add_argument("--hc", default="HC3", choices=["HC0", "HC1", "HC2", "HC3"])
    p.add_argument("--out", required=True)

    p = command("benchmark", cmd_benchmark, "Monte Carlo MSE / classification benchmark")
    p.add_argument("--settings", type=_int_list, default=[1, 2, 3, 4])
    p.add_argument("--methods", type=_name_list, default=["csf", "ipcw", "vt", "slearner"])
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--trees", type=int, default=None)
    p.add_argument("--nuisance-trees", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out-dir", required=True)

    p = command("coverage", cmd_coverage, "confidence-interval coverage experiment")
    p.add_argument("--setting", type=int, required=True, choices=[1, 2, 3, 4])
    p.add_argument("--points", default="default", help="'default' or comma-separated values v (point = v*ones)")
    p.add_argument("--p", type=int, default=5)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--trees", type=int, default=5000)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--debias", default="bayes", choices=["bayes", "floor"],
                   help="little-bags variance: posterior mean (bayes) or raw difference clipped at 0 (floor)")
    p.add_argument("--out", required=True)

    p = command("diagnose", cmd_diagnose, "overlap and censoring diagnostics")
    _add_data_flags(p)
    p.add_argument("--nuisance-trees", type=int, default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)

    p = sub.add_parser("rerun", help="replay a run from its manifest")
    p.add_argument("manifest")
    p.set_defaults(func=None)
    return parser


def _manifest_path(args, outputs):
    if args.manifest:
        return args.manifest
    base = outputs[0] if outputs else "causalsurv"
    if os.path.isdir(base):
        return os.path.join(base, "manifest.json")
    if getattr(args, "out_dir", None):
        return os.path.join(args.out_dir, "manifest.json")
    return base + ".manifest.json"


def _input_paths(args):
    return [v for k in ("data", "model") if (v := getattr(args, k, None)) is not None]


def run(argv) -> int:
    parser = build_parser()
    argv = list(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "rerun":
        try:
            with open(args.manifest) as fh:
                recorded = json.load(fh)["argv"]
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: cannot read manifest: {exc}", file=sys.stderr)
            return EXIT_USAGE
        return run(recorded)

    start = time.time()
    try:
        outputs, extra = args.func(args)
    except (UsageError, ParseError, SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FitError, CausalSurvError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    config = {k: v for k, v in vars(args).items() if k not in ("func", "manifest")}
    manifest = {
        "command": args.command,
        "argv": argv,
        "arguments": config,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "inputs": _input_paths(args),
        "outputs": outputs,
        "wall_clock_seconds": round(time.time() - start, 3),
    }
    manifest.update(extra)
    _write_json(_manifest_path(args, outputs), manifest)
    return EXIT_OK


def main(argv=None) -> int:
    code = run(sys.argv[1:] if argv is None else argv)
    if argv is None:
        sys.exit(code)
    return code


if __name__ == "__main__":
    main()
