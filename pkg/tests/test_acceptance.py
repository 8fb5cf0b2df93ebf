"""Acceptance criteria, one test per criterion.

Each test records a single PASS/FAIL/SKIP line that is printed in the
terminal summary (and immediately with ``-s``). Tolerances are fixed here
and must not be relaxed to make a run pass.
"""

import json
import math
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from retboost.baselines import fit_arma, fit_ridge
from retboost.data import SyntheticSpec, generate_synthetic
from retboost.evaluation import binomial_sign_test, directional_accuracy, dm_test, metrics, pt_test
from retboost.experiment import ExperimentConfig, run_experiment
from retboost.features import FeatureSpec, assemble_design_matrix
from retboost.gbt import GbtParams, fit_gbt
from retboost.series import chronological_split, log_returns, reconstruct_prices
from retboost.tuning import tune
from retboost.walkforward import EXPANDING, ROLLING, ModelSpec, walk_forward_run

from conftest import make_prices, random_walk
from oracles import brute_force_boost, compare_trees, dm_by_hand, normal_equations_ridge, package_tree_as_dict
from oracles import random_gbt_case

ENV_NEPSE = "RETBOOST_NEPSE_CSV"
ENV_NEPSE_DATE_FORMAT = "RETBOOST_NEPSE_DATE_FORMAT"

RESULTS: list[str] = []


@contextmanager
def criterion(number: int, title: str):
    """Record one summary line for the enclosed checks."""
    notes: list[str] = []
    t0 = time.perf_counter()

    def line(status):
        detail = "; ".join(notes)
        return f"[{status}] {number}. {title} ({time.perf_counter() - t0:.1f}s){': ' + detail if detail else ''}"

    try:
        yield notes
    except pytest.skip.Exception:
        RESULTS.append(line("SKIP"))
        print(RESULTS[-1])
        raise
    except BaseException:
        RESULTS.append(line("FAIL"))
        print(RESULTS[-1])
        raise
    RESULTS.append(line("PASS"))
    print(RESULTS[-1])


# ---------------------------------------------------------------------------- 1


def test_criterion_1_gbt_oracle_equivalence():
    with criterion(1, "GBT matches brute-force split enumerator on 50 datasets") as notes:
        t0 = time.perf_counter()
        mismatches = []
        for seed in range(50):
            X, y, s = random_gbt_case(seed)
            assert len(y) <= 30 and X.shape[1] <= 3 and s["depth"] <= 2 and 1 <= s["rounds"] <= 3
            m = fit_gbt(X, y, GbtParams(n_estimators=s["rounds"], max_depth=s["depth"], learning_rate=s["lr"],
                                        reg_lambda=s["lam"], gamma=s["gamma"], min_child_weight=s["mcw"],
                                        reg_alpha=s["alpha"], subsample=1.0, colsample_bytree=1.0,
                                        split_mode="exact"))
            base, trees = brute_force_boost(X, y, **s)
            if abs(m.base_score - base) > 1e-12 or len(m.trees) != len(trees):
                mismatches.append(seed)
                continue
            if any(compare_trees(package_tree_as_dict(t), o, tol=1e-12) is not None for t, o in zip(m.trees, trees)):
                mismatches.append(seed)
        elapsed = time.perf_counter() - t0
        notes.append(f"{50 - len(mismatches)}/50 identical, {elapsed:.2f}s")
        assert not mismatches, mismatches
        assert elapsed < 10.0


# ---------------------------------------------------------------------------- 2


def test_criterion_2_ridge_correctness():
    with criterion(2, "ridge closed form vs normal equations; huge alpha shrinks to zero") as notes:
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            n, p = int(rng.integers(8, 60)), int(rng.integers(1, 6))
            X = rng.normal(size=(n, p))
            y = X @ rng.normal(size=p) + rng.normal(size=n)
            alpha = float(10 ** rng.uniform(-3, 2))
            m = fit_ridge(X, y, alpha)
            coef, b = normal_equations_ridge(X, y, alpha)
            worst = max(worst, float(np.max(np.abs(m.coefficients - coef))), abs(m.intercept - b))
        rng = np.random.default_rng(99)
        X = rng.normal(size=(50, 4))
        big = fit_ridge(X, X @ [3.0, -2.0, 1.0, 0.5] + rng.normal(size=50), 1e9)
        shrunk = float(np.max(np.abs(big.coefficients)))
        notes.append(f"max deviation {worst:.1e}, max|coef| at alpha=1e9 {shrunk:.1e}")
        assert worst <= 1e-10
        assert shrunk < 1e-4


# ---------------------------------------------------------------------------- 3


def _leak_inputs(closes, lags):
    prices = make_prices(closes)
    ret = log_returns(prices)
    return prices, ret, assemble_design_matrix(ret, FeatureSpec(lag_count=lags))


def test_criterion_3_leakage_bit_exact():
    with criterion(3, "future perturbation leaves features, tuning and earlier predictions byte-identical") as notes:
        lags = 10
        closes = generate_synthetic(SyntheticSpec(n=520, ar_coeff=0.3, seed=8)).closes
        prices, ret, dm = _leak_inputs(closes, lags)
        train_end = chronological_split(dm.n_rows, 0.2).train_end
        n_test = dm.n_rows - train_end
        models = [
            ModelSpec("gbt", {"n_estimators": 30, "max_depth": 3, "learning_rate": 0.1, "gamma": 0.0,
                              "subsample": 0.8, "colsample_bytree": 0.8, "seed": 3}),
            ModelSpec("ridge", {"alpha": 0.5}),
            ModelSpec("arma", {"p": 2, "q": 1}),
        ]
        base_runs = {m.family: walk_forward_run(dm, prices, m, EXPANDING, returns=ret, train_end=train_end)
                     for m in models}
        base_roll = walk_forward_run(dm, prices, models[0], ROLLING, returns=ret, train_end=train_end)

        def tuned(design):
            X, y = design.X[:train_end], design.y[:train_end]
            return json.dumps([tune(X, y, f, trials=8, seed=4).to_dict() for f in ("ridge", "gbt")],
                              sort_keys=True)

        base_tune = tuned(dm)
        rng = np.random.default_rng(0)
        checked = 0
        for t in (0, n_test // 2, n_test - 2):
            last = int(dm.target_index[train_end + t]) + 1  # final close used by step t
            for how in ("single", "tail"):
                c2 = closes.copy()
                if how == "single":
                    c2[int(rng.integers(last + 1, len(c2)))] *= 1.5
                else:
                    c2[last + 1:] *= np.exp(rng.normal(0, 0.05, len(c2) - last - 1))
                p2, r2, dm2 = _leak_inputs(c2, lags)
                keep = train_end + t + 1
                assert dm2.X[:keep].tobytes() == dm.X[:keep].tobytes()
                assert dm2.y[:keep].tobytes() == dm.y[:keep].tobytes()
                assert tuned(dm2) == base_tune
                for m in models:
                    other = walk_forward_run(dm2, p2, m, EXPANDING, returns=r2, train_end=train_end)
                    for a, b in zip(base_runs[m.family].records[:t + 1], other.records[:t + 1]):
                        assert np.float64(a.predicted_return).tobytes() == np.float64(b.predicted_return).tobytes()
                        checked += 1
                other = walk_forward_run(dm2, p2, models[0], ROLLING, returns=r2, train_end=train_end)
                for a, b in zip(base_roll.records[:t + 1], other.records[:t + 1]):
                    assert np.float64(a.predicted_return).tobytes() == np.float64(b.predicted_return).tobytes()
                    checked += 1
        notes.append(f"{checked} step predictions compared across 6 perturbations")


# ---------------------------------------------------------------------------- 4


def test_criterion_4_round_trip():
    with criterion(4, "prices -> returns -> reconstruction round trip") as notes:
        worst = 0.0
        for seed in range(20):
            prices = random_walk(1000, seed=seed, sd=0.02)
            r = log_returns(prices).returns
            rebuilt = reconstruct_prices(prices.closes[:-1], r)
            worst = max(worst, float(np.max(np.abs(rebuilt / prices.closes[1:] - 1))))
        notes.append(f"max relative error {worst:.1e} over 20 series")
        assert worst <= 1e-9


# ---------------------------------------------------------------------------- 5


def test_criterion_5_statistics_oracles():
    with criterion(5, "binomial, DM and PT oracles") as notes:
        assert binomial_sign_test(8, 10) == 56 / 1024
        ea = np.array([0.012, -0.004, 0.021, 0.007, -0.015, 0.003, 0.000, 0.018, -0.009, 0.011, 0.006, -0.013])
        eb = np.array([0.010, -0.008, 0.012, 0.009, -0.005, 0.004, 0.002, 0.008, -0.006, 0.004, 0.001, -0.011])
        raw, corrected = dm_by_hand(ea, eb)
        out = dm_test(ea, eb)
        dev = max(abs(out["statistic_uncorrected"] - raw), abs(out["statistic"] - corrected))
        assert dev <= 1e-8
        back = dm_test(eb, ea)
        assert back["statistic"] == -out["statistic"] and back["p_value"] == out["p_value"]
        rng = np.random.default_rng(7)
        small = 0
        for _ in range(200):
            a = rng.normal(size=250)
            pred = rng.permutation(rng.normal(size=250))
            small += abs(pt_test(a, pred)["statistic"]) < 3
        notes.append(f"DM deviation {dev:.1e}; PT |stat|<3 in {small}/200")
        assert small >= 190


# ---------------------------------------------------------------------------- 6


def test_criterion_6_synthetic_signal_recovery():
    with criterion(6, "AR(1) phi=0.3 signal recovery by GBT walk-forward") as notes:
        t0 = time.perf_counter()
        spec = SyntheticSpec(n=3000, ar_coeff=0.3, noise_sd=0.01, seed=42)
        prices = generate_synthetic(spec)
        ret = log_returns(prices)
        dm = assemble_design_matrix(ret, FeatureSpec(lag_count=10))
        split = chronological_split(dm.n_rows, 0.2)
        params = {"n_estimators": 200, "max_depth": 3, "learning_rate": 0.05, "gamma": 0.0}
        res = walk_forward_run(dm, prices, ModelSpec("gbt", params), EXPANDING, returns=ret,
                               train_end=split.train_end, n_jobs=os.cpu_count() or 1)
        a = res.arrays()
        da = directional_accuracy(a["actual_return"], a["predicted_return"])
        rmse = metrics(a["actual_return"], a["predicted_return"])["rmse"]
        zero = math.sqrt(float(np.mean(a["actual_return"] ** 2)))
        train_r = ret.returns[: int(dm.target_index[split.train_end])]
        phi = float(fit_arma(train_r, 1, 0).params[1])
        elapsed = time.perf_counter() - t0
        notes.append(f"DA {da:.2f}% (theory {100 * (0.5 + math.asin(0.3) / math.pi):.1f}%), "
                     f"RMSE {rmse:.6f} vs zero {zero:.6f}, AR phi {phi:.3f}, {elapsed:.0f}s")
        assert not res.failed
        assert da > 55.0
        assert rmse < zero
        assert abs(phi - 0.3) <= 0.05
        assert elapsed < 300


# ------------------------------------------------------------------------ 7, 8


@pytest.fixture(scope="module")
def full_grid_bundles(tmp_path_factory):
    """Two runs of the full model x window x lag grid with 60 tuning trials."""
    outs = []
    for name in ("first", "second"):
        out = tmp_path_factory.mktemp(name)
        cfg = ExperimentConfig(synthetic=SyntheticSpec(n=500, ar_coeff=0.3, seed=1), tuning_trials=60,
                               bootstrap_resamples=200, output_dir=str(out))
        outs.append((run_experiment(cfg), out))
    return outs


def test_criterion_7_determinism(full_grid_bundles):
    with criterion(7, "identical config and seed give byte-identical bundles") as notes:
        (res, a), (_, b) = full_grid_bundles
        fa = sorted(str(p.relative_to(a)) for p in a.rglob("*") if p.is_file())
        fb = sorted(str(p.relative_to(b)) for p in b.rglob("*") if p.is_file())
        assert fa == fb
        differing = [f for f in fa if (a / f).read_bytes() != (b / f).read_bytes()]
        trial_rows = [len((a / "trials" / f"{fam}_L{lag}.csv").read_text().splitlines()) - 2
                      for fam in ("gbt", "ridge") for lag in (10, 20, 30)]
        notes.append(f"{len(fa)} files, {len(differing)} differ, trials per log {sorted(set(trial_rows))}")
        assert not differing, differing
        assert all(len(t.trials) == 60 for t in res.tuning.values())
        assert set(trial_rows) == {60}


def test_criterion_8_report_shape(full_grid_bundles):
    with criterion(8, "full grid gives 14 return rows and a price-metric section") as notes:
        res, out = full_grid_bundles[0]
        rows = (out / "table1_returns.csv").read_text().splitlines()[2:]
        models = [r.split(",")[0] for r in rows]
        t2 = (out / "table2_prices.csv").read_text().splitlines()[2:]
        md = (out / "tables.md").read_text()
        notes.append(f"{len(rows)} rows ({models.count('GBT')} GBT, {models.count('Ridge')} Ridge, "
                     f"{models.count('ARMA')} ARMA), {len(t2)} price rows")
        assert len(rows) == 14
        assert (models.count("GBT"), models.count("Ridge"), models.count("ARMA")) == (6, 6, 2)
        assert len(t2) == 3 and "reconstructed closing prices" in md
        for r in res.runs:
            assert all(math.isfinite(v) for v in r.report["prices"].values() if v is not None)


# ---------------------------------------------------------------------------- 9


def test_criterion_9_nepse_soft_target(tmp_path):
    with criterion(9, "real NEPSE data: GBT (expanding, 20 lags) beats ridge and ARMA") as notes:
        path = os.environ.get(ENV_NEPSE)
        if not path:
            notes.append(f"set {ENV_NEPSE} to a NEPSE price CSV to run")
            pytest.skip(f"{ENV_NEPSE} not set")
        cfg = ExperimentConfig(data_path=str(Path(path)), date_format=os.environ.get(ENV_NEPSE_DATE_FORMAT),
                               output_dir=str(tmp_path), n_jobs=os.cpu_count() or 1)
        res = run_experiment(cfg)
        by_id = {r.run_id: r for r in res.runs}
        gbt = by_id["gbt_expanding_L20"].report
        ridge = min((r for r in res.runs if r.family == "ridge"), key=lambda r: r.report["returns"]["rmse"]).report
        arma = min((r for r in res.runs if r.family == "arma"), key=lambda r: r.report["returns"]["rmse"]).report
        rm = [x["returns"]["rmse"] for x in (gbt, ridge, arma)]
        da = [x["directional_accuracy"] for x in (gbt, ridge, arma)]
        notes.append(f"RMSE gbt/ridge/arma {rm[0]:.6f}/{rm[1]:.6f}/{rm[2]:.6f}, "
                     f"DA {da[0]:.2f}/{da[1]:.2f}/{da[2]:.2f} (target 65.15 +/- 5)")
        assert rm[0] < rm[1] and rm[0] < rm[2]
        assert da[0] > da[1] and da[0] > da[2]
        assert abs(da[0] - 65.15) <= 5.0
