"""Hyperparameter search on the initial training block: expanding time-series
CV folds scored by RMSE, with a univariate Tree-structured Parzen Estimator."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .baselines import fit_ridge
from .gbt import GbtParams, fit_gbt, predict_gbt

logger = logging.getLogger(__name__)

N_STARTUP = 10
GOOD_FRACTION = 0.25
N_CANDIDATES = 24


@dataclass(frozen=True)
class Param:
    low: float
    high: float
    scale: str = "linear"  # linear | log | int

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"low must be < high ({self.low}, {self.high})")
        if self.scale == "log" and self.low <= 0:
            raise ValueError("log-scaled bounds must be positive")
        if self.scale not in ("linear", "log", "int"):
            raise ValueError(f"unknown scale {self.scale!r}")

    # internal coordinates: ln(v) for log, v otherwise; ints widen by 0.5
    @property
    def bounds(self) -> tuple[float, float]:
        if self.scale == "log":
            return math.log(self.low), math.log(self.high)
        if self.scale == "int":
            return self.low - 0.5, self.high + 0.5
        return float(self.low), float(self.high)

    def to_internal(self, v) -> float:
        return math.log(v) if self.scale == "log" else float(v)

    def from_internal(self, u):
        if self.scale == "log":
            return float(min(max(math.exp(u), self.low), self.high))
        if self.scale == "int":
            return int(min(max(round(u), self.low), self.high))
        return float(min(max(u, self.low), self.high))

    def midpoint(self):
        if self.scale == "log":
            return math.sqrt(self.low * self.high)
        if self.scale == "int":
            return int((self.low + self.high) // 2)
        return (self.low + self.high) / 2

    def contains(self, v) -> bool:
        ok = self.low <= v <= self.high
        return ok and (self.scale != "int" or float(v).is_integer())


SearchSpace = dict  # name -> Param, iterated in insertion order

GBT_SPACE: SearchSpace = {
    "n_estimators": Param(200, 1200, "int"),
    "max_depth": Param(3, 10, "int"),
    "learning_rate": Param(0.01, 0.3, "log"),
    "subsample": Param(0.6, 1.0),
    "colsample_bytree": Param(0.6, 1.0),
    "gamma": Param(0.0, 5.0),
    "min_child_weight": Param(1, 10, "int"),
    "reg_alpha": Param(0.0, 1.0),
    "reg_lambda": Param(0.0, 2.0),
}

RIDGE_SPACE: SearchSpace = {"alpha": Param(1e-4, 1e3, "log")}


def default_space(family: str) -> SearchSpace:
    return {"gbt": GBT_SPACE, "ridge": RIDGE_SPACE}[family]


def midrange_params(space: SearchSpace) -> dict:
    return {name: p.midpoint() for name, p in space.items()}


@dataclass
class Trial:
    index: int
    params: dict
    fold_scores: list = field(default_factory=list)
    cv_score: float | None = None
    seed: int = 0
    status: str = "ok"
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ CV folds


def ts_cv_splits(n: int, k: int = 5) -> list[tuple[np.ndarray, np.ndarray]]:
    """Expanding-window folds: ``n`` rows cut into ``k+1`` chunks (remainder
    to the first); fold ``i`` trains on chunks ``0..i`` and validates on
    chunk ``i+1``."""
    if k < 1 or n < 2 * (k + 1):
        raise ValueError(f"n={n} is too small for {k} folds")
    size = n // (k + 1)
    first = size + n % (k + 1)
    bounds = [0, first] + [first + size * i for i in range(1, k + 1)]
    return [
        (np.arange(0, bounds[i + 1]), np.arange(bounds[i + 1], bounds[i + 2]))
        for i in range(k)
    ]


# ------------------------------------------------------------------ sampler


def _trunc_logpdf(x, mu, sigma, lo, hi):
    z = (x - mu) / sigma
    mass = ndtr((hi - mu) / sigma) - ndtr((lo - mu) / sigma)
    return -0.5 * z * z - np.log(sigma * math.sqrt(2 * math.pi)) - np.log(np.maximum(mass, 1e-300))


class _Parzen:
    """Gaussian mixture over observed points plus a broad prior, truncated to the bounds."""

    def __init__(self, obs, lo, hi):
        obs = np.asarray(obs, dtype=np.float64)
        width = hi - lo
        n = len(obs)
        sigma = max(width * max(n, 1) ** -0.2, width / 100)
        self.mus = np.r_[obs, (lo + hi) / 2]
        self.sigmas = np.r_[np.full(n, sigma), width]
        self.weights = np.full(n + 1, 1.0 / (n + 1))
        self.lo, self.hi = lo, hi

    def sample(self, rng, size):
        comp = rng.choice(len(self.mus), size=size, p=self.weights)
        mu, sd = self.mus[comp], self.sigmas[comp]
        a, b = ndtr((self.lo - mu) / sd), ndtr((self.hi - mu) / sd)
        u = a + rng.random(size) * (b - a)
        u = np.clip(u, 1e-300, 1 - 1e-16)
        return np.clip(mu + sd * ndtri(u), self.lo, self.hi)

    def logpdf(self, x):
        x = np.asarray(x, dtype=np.float64)[:, None]
        comp = _trunc_logpdf(x, self.mus[None, :], self.sigmas[None, :], self.lo, self.hi)
        comp = comp + np.log(self.weights)[None, :]
        m = comp.max(axis=1, keepdims=True)
        return (m + np.log(np.exp(comp - m).sum(axis=1, keepdims=True)))[:, 0]


def suggest_params(space: SearchSpace, history: list, seed: int = 42, sampler: str = "tpe") -> dict:
    """Propose the next parameter set.

    Uniform (log-uniform for log scales) until ``N_STARTUP`` scored trials
    exist, then per-parameter TPE: the best ``GOOD_FRACTION`` of trials form
    the "good" density, the rest the "bad" one, and the candidate with the
    highest good/bad density ratio is returned.
    """
    rng = np.random.default_rng([seed, len(history)])
    scored = [t for t in history if t.status == "ok" and t.cv_score is not None]
    out = {}
    if sampler == "random" or len(scored) < N_STARTUP:
        for name, p in space.items():
            if p.scale == "int":
                out[name] = int(rng.integers(int(p.low), int(p.high) + 1))
            else:
                lo, hi = p.bounds
                out[name] = p.from_internal(rng.uniform(lo, hi))
        return out
    if sampler != "tpe":
        raise ValueError(f"unknown sampler {sampler!r}")
    ranked = sorted(scored, key=lambda t: (t.cv_score, t.index))
    n_good = max(1, math.ceil(GOOD_FRACTION * len(ranked)))
    good, bad = ranked[:n_good], ranked[n_good:]
    for name, p in space.items():
        lo, hi = p.bounds
        l_est = _Parzen([p.to_internal(t.params[name]) for t in good], lo, hi)
        g_est = _Parzen([p.to_internal(t.params[name]) for t in bad], lo, hi)
        cand = l_est.sample(rng, N_CANDIDATES)
        score = l_est.logpdf(cand) - g_est.logpdf(cand)
        out[name] = p.from_internal(float(cand[int(np.argmax(score))]))
    return out


# --------------------------------------------------------------------- tuning


@dataclass
class TuneResult:
    family: str
    best_params: dict
    best_trial: Trial
    trials: list

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "best_params": self.best_params,
            "best_trial": self.best_trial.index,
            "trials": [t.to_dict() for t in self.trials],
        }


def make_estimator(family: str, params: dict, gbt_base: GbtParams | None = None):
    """Return ``fit(X, y) -> predict`` for a tunable family."""
    if family == "gbt":
        base = asdict(gbt_base or GbtParams())
        base.update(params)
        gp = GbtParams(**base)

        def fit(X, y):
            model = fit_gbt(X, y, gp)
            return lambda Xn: predict_gbt(model, Xn)
        return fit
    if family == "ridge":
        def fit(X, y):
            model = fit_ridge(X, y, params["alpha"])
            return model.predict
        return fit
    raise ValueError(f"family {family!r} is not tunable with this routine")


def cv_rmse(X, y, family: str, params: dict, k: int = 5, gbt_base: GbtParams | None = None):
    fit = make_estimator(family, params, gbt_base)
    scores = []
    for tr, va in ts_cv_splits(len(y), k):
        predict = fit(X[tr], y[tr])
        err = predict(X[va]) - y[va]
        scores.append(math.sqrt(float(np.mean(err**2))))
    return scores


def tune(X, y, family: str, space: SearchSpace | None = None, trials: int = 60, seed: int = 42,
         k: int = 5, sampler: str = "tpe", include_defaults: bool = True,
         gbt_base: GbtParams | None = None) -> TuneResult:
    """Search ``space`` for the parameters with the lowest mean fold RMSE.

    ``X`` and ``y`` must be the initial training block only. Trial 0 is the
    mid-range parameter set when ``include_defaults`` is true. A trial whose
    fit raises is logged as failed and never selected.
    """
    space = space or default_space(family)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if gbt_base is None:
        gbt_base = GbtParams(seed=seed)
    history: list[Trial] = []
    for i in range(trials):
        if i == 0 and include_defaults:
            params = midrange_params(space)
        else:
            params = suggest_params(space, history, seed=seed, sampler=sampler)
        trial = Trial(index=i, params=params, seed=seed)
        try:
            trial.fold_scores = cv_rmse(X, y, family, params, k=k, gbt_base=gbt_base)
            trial.cv_score = float(np.mean(trial.fold_scores))
            if not math.isfinite(trial.cv_score):
                raise FloatingPointError("non-finite CV score")
        except Exception as exc:  # noqa: BLE001 - any fit failure just disqualifies the trial
            trial.status, trial.error, trial.cv_score = "failed", f"{type(exc).__name__}: {exc}", None
            logger.warning("trial %d failed: %s", i, trial.error)
        history.append(trial)
        logger.debug("trial %d %s cv=%s", i, params, trial.cv_score)
    ok = [t for t in history if t.status == "ok"]
    if not ok:
        raise RuntimeError("every tuning trial failed")
    best = min(ok, key=lambda t: (t.cv_score, t.index))
    return TuneResult(family=family, best_params=dict(best.params), best_trial=best, trials=history)
