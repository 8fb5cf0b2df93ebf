"""One-step-ahead walk-forward evaluation with per-step refits."""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import ArmaConvergenceError, aic_order_search, fit_arma, fit_ridge, forecast_one_step
from .features import DesignMatrix
from .gbt import GbtParams, fit_gbt, predict_gbt
from .series import PriceSeries, ReturnSeries, chronological_split, reconstruct_prices

logger = logging.getLogger(__name__)

FAMILIES = ("gbt", "ridge", "arma")


@dataclass(frozen=True)
class WindowScheme:
    kind: str = "expanding"
    rolling_length: int = 800

    def __post_init__(self):
        if self.kind not in ("expanding", "rolling"):
            raise ValueError(f"unknown window kind {self.kind!r}")
        if self.kind == "rolling" and self.rolling_length < 50:
            raise ValueError("rolling_length must be >= 50")


EXPANDING = WindowScheme("expanding")
ROLLING = WindowScheme("rolling", 800)


def window_bounds(step: int, train_end: int, scheme: WindowScheme) -> tuple[int, int]:
    """Training rows ``[start, end)`` for test step ``step``; row ``end`` is predicted."""
    if step < 0:
        raise ValueError("step must be >= 0")
    end = train_end + step
    if scheme.kind == "expanding":
        return 0, end
    return max(0, end - scheme.rolling_length), end


@dataclass(frozen=True)
class ModelSpec:
    """Model family plus the (already tuned) parameters used for every refit.

    ``params`` holds ``GbtParams`` fields for ``gbt``, ``{"alpha": ...}`` for
    ``ridge`` and ``{"p": ..., "q": ...}`` for ``arma``. For ``arma``,
    ``init`` optionally seeds the simplex search and ``reselect=True`` redoes
    the AIC order search at every step.
    """

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")


@dataclass
class StepRecord:
    step: int
    row: int
    target_date: str
    actual_return: float
    predicted_return: float | None
    prior_price: float
    actual_price: float
    reconstructed_price: float | None
    train_start: int
    train_end: int
    status: str = "ok"  # ok | fallback | unconverged | failed
    error: str | None = None


@dataclass
class WalkForwardResult:
    family: str
    scheme: WindowScheme
    lag_count: int | None
    params: dict
    train_end: int
    records: list
    manifest: dict = field(default_factory=dict)

    @property
    def completed(self) -> list:
        return [r for r in self.records if r.status != "failed"]

    @property
    def failed(self) -> list:
        return [r for r in self.records if r.status == "failed"]

    def arrays(self) -> dict:
        recs = self.completed
        return {
            "dates": np.array([r.target_date for r in recs], dtype="datetime64[D]"),
            "actual_return": np.array([r.actual_return for r in recs]),
            "predicted_return": np.array([r.predicted_return for r in recs]),
            "actual_price": np.array([r.actual_price for r in recs]),
            "prior_price": np.array([r.prior_price for r in recs]),
            "reconstructed_price": np.array([r.reconstructed_price for r in recs]),
        }

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "scheme": asdict(self.scheme),
            "lag_count": self.lag_count,
            "params": self.params,
            "train_end": self.train_end,
            "manifest": self.manifest,
            "records": [asdict(r) for r in self.records],
        }


def data_fingerprint(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _predict_step(model: ModelSpec, design: DesignMatrix, returns: np.ndarray, start: int, end: int):
    """Fit on rows ``[start, end)`` and forecast the return of row ``end``."""
    if model.family == "arma":
        lo = int(design.target_index[start])
        hi = int(design.target_index[end])
        window = returns[lo:hi]
        if np.ptp(window) == 0:
            return float(window[-1]), "fallback"
        if model.params.get("reselect"):
            fitted = aic_order_search(window).best
        else:
            fitted = fit_arma(window, int(model.params["p"]), int(model.params["q"]),
                              init=model.params.get("init"))
        return forecast_one_step(fitted), "ok" if fitted.converged else "unconverged"

    X, y = design.X[start:end], design.y[start:end]
    x_next = design.X[end:end + 1]
    if np.ptp(y) == 0:
        return float(y[0]), "fallback"
    if model.family == "gbt":
        gbt = fit_gbt(X, y, GbtParams(**model.params), feature_names=design.feature_names)
        return float(predict_gbt(gbt, x_next)[0]), "ok"
    ridge = fit_ridge(X, y, float(model.params["alpha"]))
    return float(forecast_one_step(ridge, x_next[0])), "ok"


def walk_forward_run(design: DesignMatrix, prices: PriceSeries | np.ndarray, model: ModelSpec,
                     scheme: WindowScheme = EXPANDING, returns: ReturnSeries | np.ndarray | None = None,
                     train_end: int | None = None, test_fraction: float = 0.2,
                     lag_count: int | None = None, n_jobs: int = 1,
                     manifest: dict | None = None) -> WalkForwardResult:
    """Refit on each training window and forecast one step ahead over the test block.

    ``prices`` are the closes the returns were computed from, so the target
    of row ``i`` is ``ln(closes[t+1] / closes[t])`` with
    ``t = design.target_index[i]``. Reconstructed prices always use the
    realized prior close. A failing step is recorded and the run continues.
    """
    closes = np.asarray(prices.closes if isinstance(prices, PriceSeries) else prices, dtype=np.float64)
    if returns is None:
        r = np.log(closes[1:] / closes[:-1])
    else:
        r = np.asarray(returns.returns if isinstance(returns, ReturnSeries) else returns, dtype=np.float64)
    if train_end is None:
        train_end = chronological_split(design.n_rows, test_fraction).train_end
    n_test = design.n_rows - train_end

    def run(step: int) -> StepRecord:
        start, end = window_bounds(step, train_end, scheme)
        t = int(design.target_index[end])
        rec = StepRecord(
            step=step, row=end, target_date=str(design.row_dates[end]),
            actual_return=float(design.y[end]), predicted_return=None,
            prior_price=float(closes[t]), actual_price=float(closes[t + 1]),
            reconstructed_price=None, train_start=start, train_end=end,
        )
        try:
            pred, status = _predict_step(model, design, r, start, end)
            if not np.isfinite(pred):
                raise FloatingPointError("non-finite forecast")
        except (ArmaConvergenceError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            rec.status, rec.error = "failed", f"{type(exc).__name__}: {exc}"
            logger.warning("%s step %d failed: %s", model.family, step, rec.error)
            return rec
        rec.predicted_return = pred
        rec.reconstructed_price = float(reconstruct_prices([rec.prior_price], [pred])[0])
        rec.status = status
        return rec

    if n_jobs == 1:
        records = [run(s) for s in range(n_test)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs if n_jobs > 0 else None) as pool:
            records = list(pool.map(run, range(n_test)))

    info = {
        "data_fingerprint": data_fingerprint(design.X, design.y, closes),
        "n_test": n_test,
        "n_failed": sum(rec.status == "failed" for rec in records),
    }
    info.update(manifest or {})
    return WalkForwardResult(
        family=model.family, scheme=scheme, lag_count=lag_count, params=dict(model.params),
        train_end=train_end, records=records, manifest=info,
    )
