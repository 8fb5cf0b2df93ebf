"""Lagged returns and technical indicators assembled into a supervised,
leakage-free design matrix.

Rolling indicators (``rolling_std``, ``rolling_mean``, ``rsi``) return the
value *through* day t. ``assemble_design_matrix`` shifts them by one so a row
whose target is ``r_t`` only sees ``r_{t-1}`` and earlier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .series import ReturnSeries


@dataclass(frozen=True)
class FeatureSpec:
    lag_count: int = 20
    vol_windows: tuple = (5, 20)
    mean_window: int = 10
    rsi_period: int = 14
    epsilon: float = 1e-8
    std_ddof: int = 1

    def __post_init__(self):
        if self.lag_count < 1:
            raise ValueError("lag_count must be >= 1")
        if any(w < 2 for w in self.vol_windows) or self.mean_window < 2:
            raise ValueError("rolling windows must be >= 2")
        if self.rsi_period < 1:
            raise ValueError("rsi_period must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")

    @property
    def feature_names(self) -> list[str]:
        names = [f"lag_{k}" for k in range(1, self.lag_count + 1)]
        names += [f"vol_{w}" for w in self.vol_windows]
        names += [f"rsi_{self.rsi_period}", f"mean_{self.mean_window}"]
        return names

    @property
    def warmup(self) -> int:
        """Number of leading returns that cannot form a complete row."""
        return max(self.lag_count, *self.vol_windows, self.rsi_period, self.mean_window)


@dataclass(frozen=True)
class DesignMatrix:
    """Feature rows paired with the next-step log-return.

    ``target_index[i]`` is the position in the source return series of the
    target of row ``i``; ``row_dates`` are the target dates.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: list = field(default_factory=list)
    row_dates: np.ndarray = None
    target_index: np.ndarray = None

    @property
    def n_rows(self) -> int:
        return len(self.y)

    def rows(self, start: int, end: int) -> "DesignMatrix":
        return DesignMatrix(
            X=self.X[start:end],
            y=self.y[start:end],
            feature_names=self.feature_names,
            row_dates=self.row_dates[start:end],
            target_index=self.target_index[start:end],
        )


def _as_array(returns) -> np.ndarray:
    if isinstance(returns, ReturnSeries):
        returns = returns.returns
    return np.asarray(returns, dtype=np.float64)


def make_lags(returns, L: int) -> np.ndarray:
    """Columns ``lag_1..lag_L``; ``out[t, k-1] = r[t-k]``, NaN where undefined."""
    r = _as_array(returns)
    if L < 1:
        raise ValueError("L must be >= 1")
    if L >= len(r):
        raise ValueError(f"L={L} leaves no complete row for a series of length {len(r)}")
    out = np.full((len(r), L), np.nan)
    for k in range(1, L + 1):
        out[k:, k - 1] = r[:-k]
    return out


def _rolling(r: np.ndarray, window: int, reducer) -> np.ndarray:
    if window > len(r):
        raise ValueError(f"window {window} is longer than the series ({len(r)})")
    out = np.full(len(r), np.nan)
    out[window - 1:] = reducer(sliding_window_view(r, window))
    return out


def rolling_std(returns, window: int, ddof: int = 1) -> np.ndarray:
    """Standard deviation of ``r[t-window+1..t]`` (divisor ``window - ddof``)."""
    if window < 2:
        raise ValueError("window must be >= 2")
    return _rolling(_as_array(returns), window, lambda v: v.std(axis=1, ddof=ddof))


def rolling_mean(returns, window: int = 10) -> np.ndarray:
    if window < 2:
        raise ValueError("window must be >= 2")
    return _rolling(_as_array(returns), window, lambda v: v.mean(axis=1))


def rsi(returns, period: int = 14, epsilon: float = 1e-8) -> np.ndarray:
    """Relative strength index from simple trailing means of gains and losses.

    ``RS = mean(gains) / (mean(losses) + epsilon)``, ``RSI = 100 - 100/(1+RS)``.
    """
    if period < 1:
        raise ValueError("period must be >= 1")
    r = _as_array(returns)
    if period > len(r):
        raise ValueError(f"period {period} is longer than the series ({len(r)})")
    gains = np.maximum(r, 0.0)
    losses = np.maximum(-r, 0.0)
    out = np.full(len(r), np.nan)
    avg_gain = sliding_window_view(gains, period).mean(axis=1)
    avg_loss = sliding_window_view(losses, period).mean(axis=1)
    rs = avg_gain / (avg_loss + epsilon)
    out[period - 1:] = 100.0 - 100.0 / (1.0 + rs)
    return out


def _shift1(col: np.ndarray) -> np.ndarray:
    out = np.full_like(col, np.nan)
    out[1:] = col[:-1]
    return out


def assemble_design_matrix(returns: ReturnSeries, spec: FeatureSpec | None = None) -> DesignMatrix:
    spec = spec or FeatureSpec()
    r = _as_array(returns)
    dates = returns.dates if isinstance(returns, ReturnSeries) else np.arange(len(r))
    if len(r) <= spec.warmup:
        raise ValueError(
            f"series of {len(r)} returns is too short for warm-up of {spec.warmup}"
        )
    cols = [make_lags(r, spec.lag_count)]
    for w in spec.vol_windows:
        cols.append(_shift1(rolling_std(r, w, ddof=spec.std_ddof))[:, None])
    cols.append(_shift1(rsi(r, spec.rsi_period, spec.epsilon))[:, None])
    cols.append(_shift1(rolling_mean(r, spec.mean_window))[:, None])
    X = np.hstack(cols)
    X[~np.isfinite(X)] = np.nan
    keep = ~np.isnan(X).any(axis=1) & np.isfinite(r)
    idx = np.flatnonzero(keep)
    if len(idx) == 0:
        raise ValueError("no complete rows remain after dropping warm-up")
    return DesignMatrix(
        X=np.ascontiguousarray(X[idx]),
        y=r[idx].copy(),
        feature_names=spec.feature_names,
        row_dates=np.asarray(dates)[idx],
        target_index=idx,
    )
