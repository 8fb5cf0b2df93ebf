"""Price and return containers, log-return transform, price reconstruction
and chronological splitting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PriceSeries:
    """Ordered (date, close) observations.

    ``dates`` is a ``datetime64[D]`` array; dates are treated as ordered
    labels only, no calendar arithmetic is done on them.
    """

    dates: np.ndarray
    closes: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        closes = np.asarray(self.closes, dtype=np.float64)
        if dates.ndim != 1 or closes.ndim != 1 or len(dates) != len(closes):
            raise ValueError("dates and closes must be 1-D and of equal length")
        if len(dates) > 1 and not np.all(dates[1:] > dates[:-1]):
            bad = int(np.flatnonzero(dates[1:] <= dates[:-1])[0]) + 1
            raise ValueError(f"dates must be strictly increasing (violated at index {bad})")
        _check_prices(closes)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "closes", closes)

    def __len__(self):
        return len(self.closes)


@dataclass(frozen=True)
class ReturnSeries:
    """Daily log-returns; ``dates[t]`` is the date of the later close."""

    dates: np.ndarray
    returns: np.ndarray

    def __post_init__(self):
        returns = np.asarray(self.returns, dtype=np.float64)
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        if len(dates) != len(returns):
            raise ValueError("dates and returns must have equal length")
        if not np.all(np.isfinite(returns)):
            raise ValueError("returns must be finite")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "returns", returns)

    def __len__(self):
        return len(self.returns)


@dataclass(frozen=True)
class SplitIndex:
    train_end: int
    test_start: int
    test_fraction: float


def _check_prices(closes: np.ndarray) -> None:
    bad = np.flatnonzero(~np.isfinite(closes) | (closes <= 0))
    if len(bad):
        i = int(bad[0])
        raise ValueError(f"close at index {i} is not a positive finite number: {closes[i]!r}")


def log_returns(prices: PriceSeries) -> ReturnSeries:
    """``returns[t] = ln(closes[t+1] / closes[t])``, dated at the later day."""
    closes = np.asarray(prices.closes, dtype=np.float64)
    if len(closes) < 2:
        raise ValueError("at least two prices are needed to compute a return")
    _check_prices(closes)
    return ReturnSeries(dates=prices.dates[1:], returns=np.log(closes[1:] / closes[:-1]))


def reconstruct_prices(prev_closes, predicted_returns) -> np.ndarray:
    """One-step price reconstruction ``prev_close * exp(predicted_return)``.

    ``prev_closes`` must be the realized closes of the previous day, not
    earlier reconstructions.
    """
    prev = np.asarray(prev_closes, dtype=np.float64)
    r = np.asarray(predicted_returns, dtype=np.float64)
    if prev.shape != r.shape:
        raise ValueError(f"length mismatch: {prev.shape} vs {r.shape}")
    if not (np.all(np.isfinite(prev)) and np.all(np.isfinite(r))):
        raise ValueError("inputs must be finite")
    return prev * np.exp(r)


def chronological_split(n: int, test_fraction: float = 0.2) -> SplitIndex:
    """Split ``n`` rows so the final ``test_fraction`` block is held out."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if n < 5:
        raise ValueError(f"need at least 5 rows to split, got {n}")
    train_end = math.floor(n * (1.0 - test_fraction))
    if train_end < 1 or train_end >= n:
        raise ValueError(f"degenerate split: n={n}, test_fraction={test_fraction}")
    return SplitIndex(train_end=train_end, test_start=train_end, test_fraction=test_fraction)
