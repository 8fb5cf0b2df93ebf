"""Command-line entry point.

Subcommands: ``ingest``, ``synth``, ``tune``, ``walkforward``, ``evaluate``,
``report`` and ``run``. The output directory resolves as ``--output-dir``,
then ``$RETBOOST_OUTPUT_DIR``, then the config file, then ``results``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from .data import IngestError, SyntheticSpec, fingerprint_file, generate_synthetic, ingest_csv, write_prices_csv
from .evaluation import binomial_sign_test, bootstrap_r2_ci, dm_test, metric_report, pt_test
from .experiment import (
    SCHEMA_VERSION, ExperimentConfig, StageError, _write_csv, _write_json, render_tables, run_experiment,
    table1_rows, table2_rows,
)
from .features import FeatureSpec, assemble_design_matrix
from .gbt import GbtParams
from .series import chronological_split, log_returns
from .tuning import tune
from .walkforward import ModelSpec, WindowScheme, walk_forward_run

ENV_OUTPUT_DIR = "RETBOOST_OUTPUT_DIR"
logger = logging.getLogger("retboost")


def _add_source(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data source (one of --data or --synthetic)")
    g.add_argument("--data", help="price CSV with a header row")
    g.add_argument("--synthetic", action="store_true", help="use a seeded synthetic AR(1) series")
    g.add_argument("--date-column")
    g.add_argument("--close-column")
    g.add_argument("--date-format", help="strptime format, e.g. %%d/%%m/%%Y")
    _add_synth(g)


def _add_synth(g) -> None:
    d = SyntheticSpec()
    g.add_argument("--n", type=int, default=d.n, help="synthetic series length")
    g.add_argument("--ar-coeff", type=float, default=d.ar_coeff)
    g.add_argument("--noise-sd", type=float, default=d.noise_sd)
    g.add_argument("--regime", action="append", default=[], metavar="START:MULT",
                   help="scale the noise sd by MULT from return index START on (repeatable)")
    g.add_argument("--synth-seed", type=int, default=d.seed)
    g.add_argument("--initial-price", type=float, default=d.initial_price)


def _synth_spec(args) -> SyntheticSpec:
    regimes = []
    for item in args.regime:
        start, mult = item.split(":")
        regimes.append((int(start), float(mult)))
    return SyntheticSpec(n=args.n, ar_coeff=args.ar_coeff, noise_sd=args.noise_sd, regimes=tuple(regimes),
                         seed=args.synth_seed, initial_price=args.initial_price)


def _load_prices(args):
    if bool(args.data) == bool(args.synthetic):
        raise SystemExit("error: give exactly one of --data and --synthetic")
    if args.data:
        return ingest_csv(args.data, args.date_column, args.close_column, args.date_format)
    return generate_synthetic(_synth_spec(args))


def _output_dir(args, fallback: str = "results") -> Path:
    if getattr(args, "output_dir", None):
        return Path(args.output_dir)
    return Path(os.environ.get(ENV_OUTPUT_DIR) or fallback)


def _json_arg(text: str | None) -> dict:
    if not text:
        return {}
    path = Path(text)
    return json.loads(path.read_text() if path.exists() else text)


def _design(prices, lag, test_fraction):
    design = assemble_design_matrix(log_returns(prices), FeatureSpec(lag_count=lag))
    return design, chronological_split(design.n_rows, test_fraction)


def _print(doc) -> None:
    print(json.dumps(doc, indent=1, sort_keys=True))


# ---------------------------------------------------------------- subcommands


def cmd_ingest(args) -> int:
    prices = ingest_csv(args.path, args.date_column, args.close_column, args.date_format)
    _print({"path": str(args.path), "observations": len(prices), "first_date": str(prices.dates[0]),
            "last_date": str(prices.dates[-1]), "sha256": fingerprint_file(args.path)})
    if args.out:
        write_prices_csv(prices, args.out)
    return 0


def cmd_synth(args) -> int:
    prices = generate_synthetic(_synth_spec(args))
    write_prices_csv(prices, args.out)
    _print({"path": str(args.out), "observations": len(prices), "sha256": fingerprint_file(args.out)})
    return 0


def cmd_tune(args) -> int:
    prices = _load_prices(args)
    design, split = _design(prices, args.lag, args.test_fraction)
    res = tune(design.X[:split.train_end], design.y[:split.train_end], args.family, trials=args.trials,
               seed=args.seed, k=args.cv_folds, sampler=args.sampler, gbt_base=GbtParams(seed=args.seed))
    out = _output_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    names = list(res.trials[0].params)
    _write_csv(out / f"trials_{args.family}_L{args.lag}.csv", ["trial", "status", "cv_rmse"] + names + ["error"],
               [[t.index, t.status, t.cv_score] + [t.params[k] for k in names] + [t.error or ""]
                for t in res.trials])
    doc = {"family": args.family, "lag_count": args.lag, "best_params": res.best_params,
           "best_cv_rmse": res.best_trial.cv_score, "train_rows": split.train_end}
    _write_json(out / f"best_{args.family}_L{args.lag}.json", doc)
    _print(doc)
    return 0


def cmd_walkforward(args) -> int:
    prices = _load_prices(args)
    design, split = _design(prices, args.lag, args.test_fraction)
    params = _json_arg(args.params)
    if "best_params" in params:  # accept the file written by `tune`
        params = params["best_params"]
    if args.family == "gbt":
        params = {**asdict(GbtParams(seed=args.seed)), **params}
    elif args.family == "ridge":
        params.setdefault("alpha", 1.0)
    else:
        params.setdefault("p", 1)
        params.setdefault("q", 0)
    res = walk_forward_run(design, prices, ModelSpec(args.family, params),
                           WindowScheme(args.scheme, args.rolling_length), train_end=split.train_end,
                           lag_count=args.lag, n_jobs=args.n_jobs)
    out = _output_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"predictions_{args.family}_{args.scheme}_L{args.lag}.csv"
    _write_csv(path, ["date", "actual_price", "predicted_price", "prior_price", "actual_return",
                      "predicted_return", "status"],
               [[r.target_date, r.actual_price, r.reconstructed_price, r.prior_price, r.actual_return,
                 r.predicted_return, r.status] for r in res.records])
    a = res.arrays()
    rep = metric_report(a["actual_return"], a["predicted_return"], a["actual_price"], a["reconstructed_price"])
    _print({"predictions": str(path), "metrics": rep.to_dict(), "failed": len(res.failed),
            "manifest": res.manifest})
    return 0


def _read_predictions(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.DictReader(line for line in fh if not line.startswith("#"))]
    rows = [r for r in rows if r["status"] != "failed"]
    col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
    return [r["date"] for r in rows], col("actual_return"), col("predicted_return"), \
        col("actual_price"), col("predicted_price")


def cmd_evaluate(args) -> int:
    dates, ar, pr, ap, pp = _read_predictions(args.predictions)
    doc = {"metrics": metric_report(ar, pr, ap, pp).to_dict()}
    try:
        doc["pt"] = pt_test(ar, pr)
    except ValueError as exc:
        doc["pt"] = {"error": str(exc)}
    hits = int(np.sum((ar >= 0) == (pr >= 0)))
    doc["binomial"] = {"k": hits, "n": len(ar), "p_value": binomial_sign_test(hits, len(ar))}
    try:
        doc["r2_ci"] = bootstrap_r2_ci(ar, pr, resamples=args.resamples, seed=args.seed)
    except ValueError as exc:
        doc["r2_ci"] = {"error": str(exc)}
    if args.against:
        d2, ar2, pr2, *_ = _read_predictions(args.against)
        a = dict(zip(dates, ar - pr))
        b = dict(zip(d2, ar2 - pr2))
        common = sorted(set(a) & set(b))
        doc["dm"] = dm_test([a[d] for d in common], [b[d] for d in common])
    _print(doc)
    return 0


def cmd_report(args) -> int:
    src = Path(args.results)
    doc = json.loads((src / "results.json" if src.is_dir() else src).read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SystemExit(f"error: unsupported schema_version {doc.get('schema_version')!r}")
    runs = [SimpleNamespace(run_id=r["run_id"], family=r["family"], scheme=r["scheme"],
                            lag_count=r["lag_count"], report=r["metrics"], n_failed=r["n_failed"])
            for r in doc["runs"]]
    text = render_tables(runs)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    logger.debug("%d table-1 rows, %d table-2 rows", len(table1_rows(runs)), len(table2_rows(runs)))
    return 0


def _config_from_args(args) -> ExperimentConfig:
    base = _json_arg(args.config)
    if "synthetic" in base and base["synthetic"] is not None:
        base["synthetic"] = SyntheticSpec(**base["synthetic"])
    overrides = {
        "models": args.models, "lags": args.lags, "schemes": args.schemes,
        "test_fraction": args.test_fraction, "rolling_length": args.rolling_length,
        "tuning_trials": args.trials, "cv_folds": args.cv_folds, "sampler": args.sampler,
        "split_mode": args.split_mode, "max_bins": args.max_bins, "seed": args.seed, "n_jobs": args.n_jobs,
        "bootstrap_resamples": args.resamples, "top_features": args.top_features,
        "price_plot_days": args.price_plot_days, "date_column": args.date_column,
        "close_column": args.close_column, "date_format": args.date_format,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.gbt_space:
        base["gbt_space"] = _json_arg(args.gbt_space)
    if args.data:
        base["data_path"], base["synthetic"] = args.data, None
    elif args.synthetic:
        base["data_path"], base["synthetic"] = None, _synth_spec(args)
    base["output_dir"] = str(_output_dir(args, base.get("output_dir", "results")))
    return ExperimentConfig.from_dict(base)


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    if args.dump_config:
        print(cfg.to_json())
        return 0
    result = run_experiment(cfg)
    sys.stdout.write(render_tables(result.runs))
    print(f"bundle written to {cfg.output_dir}")
    return 0


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="retboost", description="One-step-ahead log-return forecasting harness")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and fingerprint a price CSV")
    p.add_argument("path")
    p.add_argument("--date-column")
    p.add_argument("--close-column")
    p.add_argument("--date-format")
    p.add_argument("--out", help="also write the normalized date,close CSV here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="write a synthetic AR(1) price CSV")
    _add_synth(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    def common(p, with_family=True):
        _add_source(p)
        p.add_argument("--test-fraction", type=float, default=0.2)
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--output-dir")
        if with_family:
            p.add_argument("--lag", type=int, default=20)

    p = sub.add_parser("tune", help="tune one family on the initial training block")
    common(p)
    p.add_argument("--family", choices=("gbt", "ridge"), default="gbt")
    p.add_argument("--trials", type=int, default=60)
    p.add_argument("--cv-folds", type=int, default=5)
    p.add_argument("--sampler", choices=("tpe", "random"), default="tpe")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("walkforward", help="walk-forward one model with fixed parameters")
    common(p)
    p.add_argument("--family", choices=("gbt", "ridge", "arma"), default="gbt")
    p.add_argument("--scheme", choices=("expanding", "rolling"), default="expanding")
    p.add_argument("--rolling-length", type=int, default=800)
    p.add_argument("--params", help="JSON object or path to one (e.g. the file written by `tune`)")
    p.add_argument("--n-jobs", type=int, default=1)
    p.set_defaults(func=cmd_walkforward)

    p = sub.add_parser("evaluate", help="metrics and tests for a predictions CSV")
    p.add_argument("predictions")
    p.add_argument("--against", help="second predictions CSV for a Diebold-Mariano comparison")
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render the performance tables from a results bundle")
    p.add_argument("results", help="bundle directory or results.json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="full pipeline: tune, walk forward, evaluate, emit the bundle")
    _add_source(p)
    p.add_argument("--config", help="ExperimentConfig as JSON (inline or a path); flags override it")
    p.add_argument("--models", nargs="+", choices=("gbt", "ridge", "arma"))
    p.add_argument("--lags", nargs="+", type=int)
    p.add_argument("--schemes", nargs="+", choices=("expanding", "rolling"))
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--rolling-length", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--cv-folds", type=int)
    p.add_argument("--sampler", choices=("tpe", "random"))
    p.add_argument("--split-mode", choices=("exact", "histogram"))
    p.add_argument("--max-bins", type=int)
    p.add_argument("--gbt-space", help='JSON overrides of GBT search ranges, e.g. \'{"gamma": [0, 0.01]}\'')
    p.add_argument("--resamples", type=int)
    p.add_argument("--top-features", type=int)
    p.add_argument("--price-plot-days", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-jobs", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except IngestError as exc:
        print(f"ingest error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
