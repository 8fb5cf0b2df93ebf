"""Forecast accuracy metrics and forecast-comparison tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.stats import norm


def _pair(actual, predicted):
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.shape != p.shape or a.ndim != 1:
        raise ValueError(f"shape mismatch: {a.shape} vs {p.shape}")
    if len(a) == 0:
        raise ValueError("empty input")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(p))):
        raise ValueError("non-finite input")
    return a, p


def r2_score(actual, predicted) -> float | None:
    """Coefficient of determination; ``None`` when the actuals have zero variance."""
    a, p = _pair(actual, predicted)
    ss_tot = float(np.sum((a - a.mean()) ** 2))
    if ss_tot == 0.0:
        return None
    return 1.0 - float(np.sum((a - p) ** 2)) / ss_tot


def metrics(actual, predicted) -> dict:
    a, p = _pair(actual, predicted)
    err = a - p
    return {
        "rmse": math.sqrt(float(np.mean(err**2))),
        "mae": float(np.mean(np.abs(err))),
        "r2": r2_score(a, p),
        "n": len(a),
    }


def _sign(x: np.ndarray) -> np.ndarray:
    # zero counts as an up move
    return np.where(x >= 0, 1, -1)


def directional_accuracy(actual, predicted) -> float:
    """Percentage of forecasts with the same sign as the outcome."""
    a, p = _pair(actual, predicted)
    return 100.0 * float(np.mean(_sign(a) == _sign(p)))


@dataclass
class MetricReport:
    returns: dict
    prices: dict
    directional_accuracy: float
    n: int

    def to_dict(self) -> dict:
        return {
            "returns": self.returns,
            "prices": self.prices,
            "directional_accuracy": self.directional_accuracy,
            "n": self.n,
        }


def metric_report(actual_returns, predicted_returns, actual_prices, predicted_prices) -> MetricReport:
    ret = metrics(actual_returns, predicted_returns)
    return MetricReport(
        returns={k: ret[k] for k in ("rmse", "mae", "r2")},
        prices={k: v for k, v in metrics(actual_prices, predicted_prices).items() if k != "n"},
        directional_accuracy=directional_accuracy(actual_returns, predicted_returns),
        n=ret["n"],
    )


# ----------------------------------------------------------------------- tests


def dm_test(errors_a, errors_b, h: int = 1, harvey: bool = True) -> dict:
    """Diebold-Mariano test of equal accuracy under squared-error loss.

    ``d_t = e_a^2 - e_b^2``. With a one-step horizon the long-run variance is
    the lag-0 autocovariance of ``d``. A positive statistic means forecast
    ``a`` has larger losses. Returns ``{"degenerate": True, ...}`` when ``d``
    has zero variance.
    """
    ea = np.asarray(errors_a, dtype=np.float64)
    eb = np.asarray(errors_b, dtype=np.float64)
    if ea.shape != eb.shape or ea.ndim != 1:
        raise ValueError("error series must be 1-D and equally long")
    n = len(ea)
    if n < 10:
        raise ValueError(f"need at least 10 paired errors, got {n}")
    d = ea**2 - eb**2
    d_bar = float(np.mean(d))
    gamma0 = float(np.mean((d - d_bar) ** 2))
    for k in range(1, h):
        gamma0 += 2.0 * float(np.mean((d[k:] - d_bar) * (d[:-k] - d_bar)))
    if not gamma0 > 0:
        return {"statistic": None, "p_value": None, "loss": "squared", "n": n,
                "degenerate": True, "mean_loss_differential": d_bar}
    raw = d_bar / math.sqrt(gamma0 / n)
    stat = raw * math.sqrt((n + 1 - 2 * h + h * (h - 1) / n) / n) if harvey else raw
    return {
        "statistic": stat,
        "statistic_uncorrected": raw,
        "p_value": float(2.0 * norm.sf(abs(stat))),
        "loss": "squared",
        "n": n,
        "degenerate": False,
        "mean_loss_differential": d_bar,
    }


def pt_test(actual, predicted) -> dict:
    """Pesaran-Timmermann test of directional predictability (one-sided)."""
    a, p = _pair(actual, predicted)
    n = len(a)
    if n < 20:
        raise ValueError(f"need at least 20 observations, got {n}")
    sa = _sign(a) > 0
    sp = _sign(p) > 0
    py = float(np.mean(sa))
    px = float(np.mean(sp))
    hit = float(np.mean(sa == sp))
    if py in (0.0, 1.0) or px in (0.0, 1.0):
        return {"statistic": None, "p_value": None, "applicable": False,
                "reason": "actual or predicted signs are all identical", "hit_rate": hit}
    p_star = py * px + (1 - py) * (1 - px)
    v_hit = p_star * (1 - p_star) / n
    v_star = (
        (2 * py - 1) ** 2 * px * (1 - px) / n
        + (2 * px - 1) ** 2 * py * (1 - py) / n
        + 4 * py * px * (1 - py) * (1 - px) / n**2
    )
    if not v_hit - v_star > 0:
        return {"statistic": None, "p_value": None, "applicable": False,
                "reason": "non-positive variance difference", "hit_rate": hit}
    stat = (hit - p_star) / math.sqrt(v_hit - v_star)
    return {"statistic": stat, "p_value": float(norm.sf(stat)), "applicable": True,
            "hit_rate": hit, "expected_hit_rate": p_star}


def binomial_sign_test(k: int, n: int, p0: float = 0.5) -> float:
    """Exact upper-tail p-value ``P(X >= k)`` for ``X ~ Binomial(n, p0)``."""
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    pr = Fraction(p0)
    q = 1 - pr
    total = sum(math.comb(n, i) * pr**i * q ** (n - i) for i in range(k, n + 1))
    return float(total)


def bootstrap_r2_ci(actual, predicted, resamples: int = 1000, seed: int = 42,
                    level: float = 0.95, max_retries: int = 100) -> dict:
    """Percentile bootstrap interval for out-of-sample R^2 (i.i.d. pairs)."""
    a, p = _pair(actual, predicted)
    n = len(a)
    if n < 30:
        raise ValueError(f"need at least 30 observations, got {n}")
    rng = np.random.default_rng(seed)
    stats = np.empty(resamples)
    perfect = np.array_equal(a, p)
    for b in range(resamples):
        for _ in range(max_retries + 1):
            idx = rng.integers(0, n, n)
            aa = a[idx]
            if perfect or np.ptp(aa) > 0:
                break
        else:
            raise RuntimeError("could not draw a resample with non-zero variance")
        stats[b] = 1.0 if perfect else r2_score(aa, p[idx])
    tail = 100 * (1 - level) / 2
    lower, upper = np.percentile(stats, [tail, 100 - tail])
    return {"lower": float(lower), "upper": float(upper), "resamples": resamples,
            "seed": seed, "point": r2_score(a, p) if not perfect else 1.0}
