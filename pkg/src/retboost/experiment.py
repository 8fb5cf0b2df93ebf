"""Experiment configuration, the end-to-end pipeline and report emission."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import adf_test, aic_order_search
from .data import SyntheticSpec, fingerprint_file, generate_synthetic, ingest_csv
from .evaluation import binomial_sign_test, bootstrap_r2_ci, dm_test, metric_report, pt_test
from .features import FeatureSpec, assemble_design_matrix
from .gbt import GbtParams, fit_gbt, gain_importance
from .series import chronological_split, log_returns
from .tuning import GBT_SPACE, Param, tune
from .walkforward import ModelSpec, WalkForwardResult, WindowScheme, data_fingerprint, walk_forward_run, window_bounds

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FAMILY_ORDER = {"gbt": 0, "ridge": 1, "arma": 2}
FAMILY_LABEL = {"gbt": "GBT", "ridge": "Ridge", "arma": "ARMA"}
SCHEME_ORDER = {"expanding": 0, "rolling": 1}
# fields that do not change results and are left out of the config hash
_NON_SEMANTIC = ("output_dir", "n_jobs")


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        self.stage = stage
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")


@dataclass
class ExperimentConfig:
    data_path: str | None = None
    synthetic: SyntheticSpec | None = None
    date_column: str | None = None
    close_column: str | None = None
    date_format: str | None = None
    models: tuple = ("gbt", "ridge", "arma")
    lags: tuple = (10, 20, 30)
    schemes: tuple = ("expanding", "rolling")
    test_fraction: float = 0.2
    rolling_length: int = 800
    tuning_trials: int = 60
    cv_folds: int = 5
    sampler: str = "tpe"
    # per-parameter overrides of the GBT search ranges: name -> [low, high, scale]
    gbt_space: dict = field(default_factory=dict)
    split_mode: str = "histogram"
    max_bins: int = 256
    arma_max_order: int = 5
    arma_reselect: bool = False
    bootstrap_resamples: int = 1000
    top_features: int = 5
    price_plot_days: int = 400
    seed: int = 42
    n_jobs: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        if isinstance(self.synthetic, dict):
            self.synthetic = SyntheticSpec(**self.synthetic)
        self.models = tuple(self.models)
        self.lags = tuple(int(v) for v in self.lags)
        self.schemes = tuple(self.schemes)
        if (self.data_path is None) == (self.synthetic is None):
            raise ValueError("exactly one of data_path and synthetic must be set")
        bad = set(self.models) - set(FAMILY_ORDER)
        if bad or not self.models:
            raise ValueError(f"unknown or empty model families: {sorted(bad)}")
        bad = set(self.schemes) - set(SCHEME_ORDER)
        if bad or not self.schemes:
            raise ValueError(f"unknown or empty window schemes: {sorted(bad)}")
        if not self.lags or min(self.lags) < 1:
            raise ValueError("lags must be a non-empty set of positive integers")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.rolling_length < 50:
            raise ValueError("rolling_length must be >= 50")
        if self.tuning_trials < 1:
            raise ValueError("tuning_trials must be >= 1")
        self.gbt_space = {k: list(v) for k, v in dict(self.gbt_space).items()}
        self.search_space("gbt")  # validates the overrides

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("models", "lags", "schemes"):
            d[k] = list(d[k])
        if self.synthetic is not None:
            d["synthetic"]["regimes"] = [list(r) for r in self.synthetic.regimes]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def config_hash(self) -> str:
        d = self.to_dict()
        for k in _NON_SEMANTIC:
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def search_space(self, family: str) -> dict | None:
        if family != "gbt" or not self.gbt_space:
            return None
        unknown = set(self.gbt_space) - set(GBT_SPACE)
        if unknown:
            raise ValueError(f"unknown GBT search parameters: {sorted(unknown)}")
        space = dict(GBT_SPACE)
        for name, spec in self.gbt_space.items():
            space[name] = Param(*spec)
        return space

    def gbt_base(self) -> GbtParams:
        return GbtParams(seed=self.seed, split_mode=self.split_mode, max_bins=self.max_bins)


@dataclass
class RunSummary:
    run_id: str
    family: str
    scheme: str
    lag_count: int | None
    report: dict
    n_failed: int
    result: WalkForwardResult = field(repr=False)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    manifest: dict
    runs: list
    tuning: dict
    arma: dict | None
    tests: dict
    importance: list
    importance_source: str | None


def _run_id(family, scheme, lag):
    return f"{family}_{scheme}" + (f"_L{lag}" if lag is not None else "")


def _sort_key(run: RunSummary):
    return (FAMILY_ORDER[run.family], SCHEME_ORDER[run.scheme], run.lag_count or 0)


def _summarize(res: WalkForwardResult, run_id: str) -> RunSummary:
    a = res.arrays()
    if len(a["actual_return"]) == 0:
        raise RuntimeError(f"run {run_id} produced no completed steps")
    rep = metric_report(a["actual_return"], a["predicted_return"], a["actual_price"], a["reconstructed_price"])
    return RunSummary(run_id=run_id, family=res.family, scheme=res.scheme.kind, lag_count=res.lag_count,
                      report=rep.to_dict(), n_failed=len(res.failed), result=res)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _aligned_errors(a: RunSummary, b: RunSummary):
    ra = {r.target_date: r for r in a.result.completed}
    rb = {r.target_date: r for r in b.result.completed}
    common = sorted(set(ra) & set(rb))
    ea = np.array([ra[d].actual_return - ra[d].predicted_return for d in common])
    eb = np.array([rb[d].actual_return - rb[d].predicted_return for d in common])
    return ea, eb


def _best(runs, family):
    cands = [r for r in runs if r.family == family]
    return min(cands, key=lambda r: (r.report["returns"]["rmse"], _sort_key(r))) if cands else None


def _significance(runs: list, cfg: ExperimentConfig) -> dict:
    best = {f: _best(runs, f) for f in FAMILY_ORDER}
    focus = best["gbt"] or min(runs, key=lambda r: (r.report["returns"]["rmse"], _sort_key(r)))
    out = {"focus_run": focus.run_id, "dm": {}}
    for fam in ("ridge", "arma"):
        other = best[fam]
        if other is None or other is focus:
            continue
        ea, eb = _aligned_errors(focus, other)
        try:
            out["dm"][other.run_id] = dm_test(ea, eb)
        except ValueError as exc:
            out["dm"][other.run_id] = {"error": str(exc)}
    a = focus.result.arrays()
    try:
        out["pt"] = pt_test(a["actual_return"], a["predicted_return"])
    except ValueError as exc:
        out["pt"] = {"error": str(exc)}
    hits = int(np.sum((a["actual_return"] >= 0) == (a["predicted_return"] >= 0)))
    n = len(a["actual_return"])
    out["binomial"] = {"k": hits, "n": n, "p0": 0.5, "p_value": binomial_sign_test(hits, n)}
    try:
        out["r2_ci"] = bootstrap_r2_ci(a["actual_return"], a["predicted_return"],
                                       resamples=cfg.bootstrap_resamples, seed=cfg.seed)
    except (ValueError, RuntimeError) as exc:
        out["r2_ci"] = {"error": str(exc)}
    return out


def run_experiment(config: ExperimentConfig, emit: bool = True) -> ExperimentResult:
    """ingest -> returns -> features per lag -> split -> tune on the initial
    block -> walk-forward per scheme -> evaluate -> (optionally) emit."""
    cfg = config
    if cfg.data_path is not None:
        prices = _stage("ingest", ingest_csv, cfg.data_path, cfg.date_column, cfg.close_column, cfg.date_format)
        fingerprint = fingerprint_file(cfg.data_path)
    else:
        prices = _stage("ingest", generate_synthetic, cfg.synthetic)
        fingerprint = data_fingerprint(prices.closes)
    returns = _stage("returns", log_returns, prices)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "data_fingerprint": fingerprint,
        "n_prices": len(prices),
        "first_date": str(prices.dates[0]),
        "last_date": str(prices.dates[-1]),
    }
    scheme_objs = {k: WindowScheme(k, cfg.rolling_length) for k in cfg.schemes}
    run_manifest = {"config_hash": manifest["config_hash"], "seed": cfg.seed}
    runs: list[RunSummary] = []
    tuning = {}
    designs = {}
    for lag in sorted(cfg.lags):
        design = _stage(f"features[L={lag}]", assemble_design_matrix, returns, FeatureSpec(lag_count=lag))
        split = _stage(f"split[L={lag}]", chronological_split, design.n_rows, cfg.test_fraction)
        designs[lag] = (design, split)
        for family in ("gbt", "ridge"):
            if family not in cfg.models:
                continue
            tr = _stage(
                f"tune[{family},L={lag}]", tune, design.X[: split.train_end], design.y[: split.train_end],
                family, space=cfg.search_space(family), trials=cfg.tuning_trials, seed=cfg.seed,
                k=cfg.cv_folds, sampler=cfg.sampler,
                gbt_base=cfg.gbt_base(),
            )
            tuning[f"{family}_L{lag}"] = tr
            params = dict(tr.best_params)
            if family == "gbt":
                params = {**asdict(cfg.gbt_base()), **params}
            for kind in cfg.schemes:
                rid = _run_id(family, kind, lag)
                res = _stage(
                    f"walkforward[{rid}]", walk_forward_run, design, prices, ModelSpec(family, params),
                    scheme_objs[kind], returns=returns, train_end=split.train_end, lag_count=lag,
                    n_jobs=cfg.n_jobs, manifest=run_manifest,
                )
                runs.append(_stage(f"evaluate[{rid}]", _summarize, res, rid))

    arma_info = None
    if "arma" in cfg.models:
        # ARMA walks the row set of the largest lag configuration
        design, split = designs[max(cfg.lags)]
        r = returns.returns
        train_r = r[int(design.target_index[0]): int(design.target_index[split.train_end])]
        adf = _stage("adf", adf_test, train_r)
        search = _stage("arma_order", aic_order_search, train_r, cfg.arma_max_order, cfg.arma_max_order)
        bm = search.best
        arma_info = {
            "adf": {"statistic": adf.statistic, "lags": adf.lags, "nobs": adf.nobs,
                    "critical_values": adf.critical_values, "p_band": adf.p_band},
            "order": [bm.p, bm.q],
            "params": [float(v) for v in bm.params],
            "aic": bm.aic,
            "search": [{"p": p, "q": q, "aic": a, "status": s} for p, q, a, s in search.table],
            "row_set_lags": max(cfg.lags),
        }
        params = {"p": bm.p, "q": bm.q, "init": [float(v) for v in bm.params], "reselect": cfg.arma_reselect}
        for kind in cfg.schemes:
            rid = _run_id("arma", kind, None)
            res = _stage(
                f"walkforward[{rid}]", walk_forward_run, design, prices, ModelSpec("arma", params),
                scheme_objs[kind], returns=returns, train_end=split.train_end, lag_count=None,
                n_jobs=cfg.n_jobs, manifest=run_manifest,
            )
            runs.append(_stage(f"evaluate[{rid}]", _summarize, res, rid))

    runs.sort(key=_sort_key)
    tests = _stage("tests", _significance, runs, cfg)

    importance, source = [], None
    best_gbt = _best(runs, "gbt")
    if best_gbt is not None:
        design, split = designs[best_gbt.lag_count]
        last_step = design.n_rows - split.train_end - 1
        start, end = window_bounds(last_step, split.train_end, scheme_objs[best_gbt.scheme])
        model = _stage("importance", fit_gbt, design.X[start:end], design.y[start:end],
                       GbtParams(**best_gbt.result.params), design.feature_names)
        ranked = gain_importance(model)
        total = sum(g for _, g in ranked)
        importance = [
            {"rank": i + 1, "feature": f, "gain": g, "share": (g / total) if total > 0 else 0.0}
            for i, (f, g) in enumerate(ranked)
        ]
        source = f"{best_gbt.run_id} final window rows [{start}, {end})"

    result = ExperimentResult(config=cfg, manifest=manifest, runs=runs, tuning=tuning, arma=arma_info,
                              tests=tests, importance=importance, importance_source=source)
    if emit:
        _stage("emit", emit_report, result, cfg.output_dir)
    return result


# ---------------------------------------------------------------------- report


def _fmt(v, digits=None):
    if v is None:
        return "n/a"
    if digits is None:
        return repr(float(v))
    return f"{v:.{digits}f}"


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                   for v in row])
    path.write_text(buf.getvalue())


def _write_json(path: Path, doc):
    doc = {"schema_version": SCHEMA_VERSION, **doc}
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n")


def table1_rows(runs) -> list:
    rows = []
    for r in runs:
        ret = r.report["returns"]
        rows.append([FAMILY_LABEL[r.family], r.scheme.capitalize(),
                     "---" if r.lag_count is None else r.lag_count,
                     ret["rmse"], ret["mae"], ret["r2"], r.report["directional_accuracy"],
                     r.report["n"], r.n_failed])
    return rows


def table2_rows(runs) -> list:
    rows = []
    for fam in FAMILY_ORDER:
        b = _best(runs, fam)
        if b is None:
            continue
        label = f"{FAMILY_LABEL[fam]} ({b.scheme[:3].capitalize()}."
        label += f", {b.lag_count})" if b.lag_count is not None else ")"
        pr = b.report["prices"]
        rows.append([label, b.run_id, pr["rmse"], pr["mae"], pr["r2"]])
    return rows


def render_tables(runs) -> str:
    out = ["# Out-of-sample performance on log-returns", "",
           "| Model | Window | Lags | RMSE | MAE | R2 | Directional accuracy (%) | n | failed |",
           "|---|---|---|---|---|---|---|---|---|"]
    for row in table1_rows(runs):
        m, w, lag, rmse, mae, r2, da, n, nf = row
        out.append(f"| {m} | {w} | {lag} | {_fmt(rmse, 6)} | {_fmt(mae, 6)} | {_fmt(r2, 4)} | "
                   f"{_fmt(da, 2)} | {n} | {nf} |")
    out += ["", "# Out-of-sample performance on reconstructed closing prices", "",
            "| Model | RMSE | MAE | R2 |", "|---|---|---|---|"]
    for label, _, rmse, mae, r2 in table2_rows(runs):
        out.append(f"| {label} | {_fmt(rmse, 2)} | {_fmt(mae, 2)} | {_fmt(r2, 4)} |")
    out.append("")
    out.append(f"schema_version: {SCHEMA_VERSION}")
    return "\n".join(out) + "\n"


def emit_report(result: ExperimentResult, output_dir) -> Path:
    """Write the result bundle to ``output_dir``.

    Files: ``results.json`` (everything), ``table1_returns.csv``,
    ``table2_prices.csv``, ``tables.md``, ``predictions/<run>.csv``,
    ``price_plot.csv`` (last N days of the focus run), ``importance.csv``,
    ``trials/<family>_L<lag>.csv``, ``tests.json``.
    """
    if not result.runs:
        raise ValueError("nothing to report: no completed runs")
    out = Path(output_dir)
    try:
        (out / "predictions").mkdir(parents=True, exist_ok=True)
        (out / "trials").mkdir(exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write to output directory {out}: {exc}") from exc

    cfg_doc = result.config.to_dict()
    for k in _NON_SEMANTIC:
        cfg_doc.pop(k)
    runs_doc = []
    for r in result.runs:
        runs_doc.append({
            "run_id": r.run_id, "family": r.family, "scheme": r.scheme, "lag_count": r.lag_count,
            "params": r.result.params, "train_end": r.result.train_end, "metrics": r.report,
            "n_failed": r.n_failed,
            "failures": [{"step": f.step, "error": f.error} for f in r.result.failed],
            "fallback_steps": sum(rec.status == "fallback" for rec in r.result.records),
            "unconverged_steps": sum(rec.status == "unconverged" for rec in r.result.records),
            "manifest": r.result.manifest,
        })
    _write_json(out / "results.json", {
        "manifest": result.manifest,
        "config": cfg_doc,
        "runs": runs_doc,
        "tuning": {k: {"best_params": v.best_params, "best_trial": v.best_trial.index,
                       "best_cv_rmse": v.best_trial.cv_score, "n_trials": len(v.trials)}
                   for k, v in sorted(result.tuning.items())},
        "arma": result.arma,
        "tests": result.tests,
        "importance": {"source": result.importance_source, "ranking": result.importance},
    })
    _write_json(out / "tests.json", {"manifest": result.manifest, "tests": result.tests})

    _write_csv(out / "table1_returns.csv",
               ["model", "window", "lags", "rmse", "mae", "r2", "directional_accuracy", "n", "failed"],
               table1_rows(result.runs))
    _write_csv(out / "table2_prices.csv", ["model", "run_id", "rmse", "mae", "r2"], table2_rows(result.runs))
    (out / "tables.md").write_text(render_tables(result.runs))

    header = ["date", "actual_price", "predicted_price", "prior_price", "actual_return",
              "predicted_return", "status", "train_start", "train_end"]
    for r in result.runs:
        _write_csv(out / "predictions" / f"{r.run_id}.csv", header, [
            [rec.target_date, rec.actual_price, rec.reconstructed_price, rec.prior_price,
             rec.actual_return, rec.predicted_return, rec.status, rec.train_start, rec.train_end]
            for rec in r.result.records
        ])
    focus = next(r for r in result.runs if r.run_id == result.tests["focus_run"])
    tail = [rec for rec in focus.result.completed][-result.config.price_plot_days:]
    _write_csv(out / "price_plot.csv", ["date", "actual_price", "predicted_price"],
               [[rec.target_date, rec.actual_price, rec.reconstructed_price] for rec in tail])

    top = result.importance[: result.config.top_features]
    _write_csv(out / "importance.csv", ["rank", "feature", "gain", "share"],
               [[d["rank"], d["feature"], d["gain"], d["share"]] for d in top])

    for key, tr in sorted(result.tuning.items()):
        names = list(tr.trials[0].params)
        rows = []
        for t in tr.trials:
            rows.append([t.index, t.status, t.cv_score] + [t.params[k] for k in names]
                        + [json.dumps(t.fold_scores)] + [t.error or ""])
        _write_csv(out / "trials" / f"{key}.csv",
                   ["trial", "status", "cv_rmse"] + names + ["fold_rmse", "error"], rows)
    return out
