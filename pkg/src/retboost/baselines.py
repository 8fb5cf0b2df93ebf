"""Benchmark forecasters: ridge regression and ARMA(p, q) fitted by
conditional sum of squares, with AIC order search and an ADF check."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import minimize

logger = logging.getLogger(__name__)

MAX_ORDER = 5
RESTARTS = 3
# largest admissible modulus of the inverse MA roots; CSS overstates the fit
# as an MA root approaches the unit circle
MA_ROOT_MAX = 0.95
FATOL = 1e-10  # on the SSE normalized by n and the sample variance


# ----------------------------------------------------------------------- ridge


@dataclass
class RidgeModel:
    alpha: float
    coefficients: np.ndarray
    intercept: float

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != len(self.coefficients):
            raise ValueError(f"expected {len(self.coefficients)} features, got {X.shape[1]}")
        return self.intercept + X @ self.coefficients


def fit_ridge(X, y, alpha: float = 1.0) -> RidgeModel:
    """Ridge regression with an unpenalized intercept.

    Features are standardized with training means and standard deviations,
    the penalized normal equations are solved in that space, and the
    coefficients are mapped back to raw units. Zero-variance columns get a
    zero coefficient.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if X.shape[0] < 1 or X.shape[0] != len(y):
        raise ValueError("X and y must have the same, non-zero number of rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    live = sd > 0
    y_bar = y.mean()
    coef = np.zeros(X.shape[1])
    if live.any():
        Z = (X[:, live] - mu[live]) / sd[live]
        A = Z.T @ Z + alpha * np.eye(Z.shape[1])
        if alpha == 0 and np.linalg.matrix_rank(Z) < Z.shape[1]:
            raise np.linalg.LinAlgError(
                "collinear features make the unpenalized system singular; use alpha > 0"
            )
        beta = np.linalg.solve(A, Z.T @ (y - y_bar))
        coef[live] = beta / sd[live]
    return RidgeModel(alpha=float(alpha), coefficients=coef, intercept=float(y_bar - mu @ coef))


# ------------------------------------------------------------------------ ARMA


@dataclass
class ArmaModel:
    p: int
    q: int
    constant: float
    ar_coeffs: np.ndarray
    ma_coeffs: np.ndarray
    sigma2: float
    aic: float
    n_obs: int
    converged: bool = True
    last_returns: np.ndarray = field(default=None, repr=False)
    last_residuals: np.ndarray = field(default=None, repr=False)

    @property
    def order(self) -> tuple[int, int]:
        return (self.p, self.q)

    @property
    def params(self) -> np.ndarray:
        return np.r_[self.constant, self.ar_coeffs, self.ma_coeffs]


class ArmaConvergenceError(RuntimeError):
    pass


@njit(cache=True, nogil=True)
def _css_residuals(r, c, phi, theta, start):
    n = len(r)
    p = len(phi)
    q = len(theta)
    e = np.zeros(n)
    for t in range(start, n):
        v = r[t] - c
        for i in range(p):
            v -= phi[i] * r[t - 1 - i]
        for j in range(q):
            if t - 1 - j >= start:
                v -= theta[j] * e[t - 1 - j]
        e[t] = v
    return e


def css_residuals(returns, constant, ar_coeffs, ma_coeffs, start=None) -> np.ndarray:
    """Innovations ``e[t]`` for ``t >= start``; earlier ones are zero."""
    r = np.asarray(returns, dtype=np.float64)
    phi = np.asarray(ar_coeffs, dtype=np.float64)
    theta = np.asarray(ma_coeffs, dtype=np.float64)
    start = len(phi) if start is None else start
    return _css_residuals(r, float(constant), phi, theta, int(start))


def _ma_admissible(theta) -> bool:
    """Inverse roots of ``1 + theta_1 z + ... + theta_q z^q`` lie within ``MA_ROOT_MAX``."""
    theta = np.asarray(theta, dtype=np.float64)
    return _invertible(theta * MA_ROOT_MAX ** -np.arange(1.0, len(theta) + 1))


@njit(cache=True, nogil=True)
def _invertible(theta) -> bool:
    """True when ``1 + theta_1 z + ... + theta_q z^q`` has all roots outside
    the unit circle (step-down recursion: every reflection coefficient below 1)."""
    a = theta.copy()
    for m in range(len(a), 0, -1):
        k = a[m - 1]
        if abs(k) >= 1.0:
            return False
        b = a[:m - 1].copy()
        for i in range(m - 1):
            b[i] = (a[i] - k * a[m - 2 - i]) / (1.0 - k * k)
        a = b
    return True


def _ar_least_squares(r: np.ndarray, p: int, start: int) -> np.ndarray:
    cols = [np.ones(len(r) - start)] + [r[start - i: len(r) - i] for i in range(1, p + 1)]
    A = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(A, r[start:], rcond=None)
    return coef


def fit_arma(returns, p: int, q: int, start: int | None = None, init=None,
             max_iter: int | None = None) -> ArmaModel:
    """CSS fit of ARMA(p, q) with a constant; d is always 0.

    The likelihood conditions on the observations before ``start`` (default
    ``p``) and sets innovations before the sample to zero. Pure AR orders are
    solved by least squares; MA terms are found by Nelder-Mead from the
    least-squares AR fit (or ``init`` when given), restarting up to
    ``RESTARTS`` times, over MA parameters whose inverse roots have modulus
    at most ``MA_ROOT_MAX``. If the search still hits its iteration cap the best
    point found is returned with ``converged=False``.
    """
    r = np.asarray(returns, dtype=np.float64)
    if not (0 <= p <= MAX_ORDER and 0 <= q <= MAX_ORDER):
        raise ValueError(f"orders must lie in [0, {MAX_ORDER}]")
    start = p if start is None else start
    if start < p:
        raise ValueError("start must be >= p")
    n = len(r) - start
    if len(r) < 10 * (p + q + 1) or n < 1:
        raise ValueError(f"series of length {len(r)} too short for ARMA({p},{q})")
    if not np.all(np.isfinite(r)):
        raise ValueError("returns must be finite")

    ar0 = _ar_least_squares(r, p, start)
    if q == 0:
        x = ar0
        converged = True
    else:
        x0 = np.r_[ar0, np.zeros(q)]
        if init is not None:
            init = np.asarray(init, dtype=np.float64)
            if init.shape != x0.shape:
                raise ValueError(f"init must have {len(x0)} entries, got {init.shape}")
            if _ma_admissible(init[p + 1:]):
                x0 = init
        scale = float(np.var(r[start:])) or 1.0
        ma_scale = MA_ROOT_MAX ** -np.arange(1.0, q + 1)

        def objective(x):
            # CSS keeps decreasing as the MA part leaves the invertible
            # region, so the search is confined to it (with a margin)
            if not _invertible(x[p + 1:] * ma_scale):
                return 1e100
            e = _css_residuals(r, x[0], x[1:p + 1], x[p + 1:], start)
            sse = float(e[start:] @ e[start:])
            return sse / (n * scale) if math.isfinite(sse) else 1e100

        dim = len(x0)
        step = np.full(dim, 0.1)
        step[0] = 0.1 * math.sqrt(scale)
        max_iter = max_iter or 1000 * dim
        x, converged = x0, False
        # Restart from the best vertex with a fresh simplex. Over-parameterized
        # orders have flat ridges where the vertices keep drifting apart in
        # parameter space while their objective values agree to FATOL; that
        # also counts as converged.
        for _ in range(1 + RESTARTS):
            simplex = np.tile(x, (dim + 1, 1))
            simplex[1:] += np.diag(step)
            res = minimize(objective, x, method="Nelder-Mead", options={
                "initial_simplex": simplex, "xatol": 1e-6, "fatol": FATOL,
                "maxiter": max_iter, "maxfev": 2 * max_iter,
            })
            x = res.x
            if res.success or np.ptp(res.final_simplex[1]) <= FATOL:
                converged = True
                break
        if not converged:
            logger.info("ARMA(%d,%d) hit the iteration cap: %s", p, q, res.message)

    c, phi, theta = float(x[0]), np.array(x[1:p + 1]), np.array(x[p + 1:])
    e = _css_residuals(r, c, phi, theta, start)
    sse = float(e[start:] @ e[start:])
    sigma2 = sse / n
    aic = n * math.log(sigma2) + 2 * (p + q + 1) if sigma2 > 0 else -math.inf
    return ArmaModel(
        p=p, q=q, constant=c, ar_coeffs=phi, ma_coeffs=theta, sigma2=sigma2, aic=aic,
        n_obs=n, converged=converged,
        last_returns=r[len(r) - p:][::-1].copy() if p else np.zeros(0),
        last_residuals=e[len(e) - q:][::-1].copy() if q else np.zeros(0),
    )


@dataclass
class OrderSearchResult:
    best: ArmaModel
    table: list  # (p, q, aic or None, status)


def aic_order_search(returns, max_p: int = MAX_ORDER, max_q: int = MAX_ORDER) -> OrderSearchResult:
    """Fit every (p, q) up to the caps on a common sample and keep the lowest AIC.

    All candidates condition on the first ``max_p`` observations so their
    AICs are computed on the same data. Ties prefer smaller ``p + q``, then
    smaller ``p``. Non-converged fits are skipped.
    """
    r = np.asarray(returns, dtype=np.float64)
    table = []
    best = None
    best_key = None
    for p in range(max_p + 1):
        for q in range(max_q + 1):
            try:
                m = fit_arma(r, p, q, start=max_p)
            except ValueError as exc:
                table.append((p, q, None, f"failed: {exc}"))
                continue
            if not m.converged:
                table.append((p, q, m.aic, "not converged"))
                continue
            table.append((p, q, m.aic, "ok"))
            key = (m.aic, p + q, p)
            if best_key is None or key < best_key:
                best, best_key = m, key
    if best is None:
        raise ArmaConvergenceError("no ARMA order could be fitted")
    return OrderSearchResult(best=best, table=table)


# ------------------------------------------------------------------- forecasts


def forecast_one_step(model, context=None):
    """Next-step mean forecast.

    For a ``RidgeModel`` ``context`` is a feature row (or rows). For an
    ``ArmaModel`` it is an optional ``(recent_returns, recent_residuals)``
    pair, most recent last; by default the tail stored at fit time is used.
    """
    if isinstance(model, RidgeModel):
        if context is None:
            raise ValueError("ridge forecasts need a feature row")
        out = model.predict(context)
        return float(out[0]) if np.ndim(context) == 1 else out
    if isinstance(model, ArmaModel):
        if context is None:
            lr, le = model.last_returns, model.last_residuals
        else:
            rets, resid = context
            rets = np.asarray(rets, dtype=np.float64)
            resid = np.asarray(resid, dtype=np.float64)
            if len(rets) < model.p or len(resid) < model.q:
                raise ValueError("context holds fewer values than the model order")
            lr = rets[len(rets) - model.p:][::-1]
            le = resid[len(resid) - model.q:][::-1]
        if lr is None or le is None:
            raise ValueError("ARMA model has no stored context")
        return float(model.constant + model.ar_coeffs @ lr + model.ma_coeffs @ le)
    raise TypeError(f"unsupported model type {type(model).__name__}")


# ------------------------------------------------------------------------- ADF

# MacKinnon (2010) response-surface coefficients, constant-only regression:
# cv(T) = b0 + b1/T + b2/T^2 + b3/T^3
_ADF_C = {
    0.01: (-3.43035, -6.5393, -16.786, -79.433),
    0.05: (-2.86154, -2.8903, -4.234, -40.040),
    0.10: (-2.56677, -1.5384, -2.809, 0.0),
}


@dataclass
class AdfResult:
    statistic: float
    lags: int
    nobs: int
    critical_values: dict
    p_band: str

    @property
    def stationary_at_1pct(self) -> bool:
        return self.statistic < self.critical_values["1%"]


def adf_critical_values(nobs: int) -> dict:
    return {
        f"{int(level * 100)}%": b0 + b1 / nobs + b2 / nobs**2 + b3 / nobs**3
        for level, (b0, b1, b2, b3) in _ADF_C.items()
    }


def adf_test(series, lags: int | None = None) -> AdfResult:
    """Augmented Dickey-Fuller test with a constant and no trend.

    ``lags`` defaults to ``floor(12 * (n/100) ** 0.25)``.
    """
    x = np.asarray(series, dtype=np.float64)
    n = len(x)
    if n < 25:
        raise ValueError(f"ADF needs at least 25 observations, got {n}")
    k = int(math.floor(12 * (n / 100) ** 0.25)) if lags is None else int(lags)
    dx = np.diff(x)
    y = dx[k:]
    m = len(y)
    if m <= k + 2:
        raise ValueError("series too short for the requested augmentation lags")
    # centring the level regressor leaves its t-statistic unchanged (a
    # constant is in the regression) and keeps large offsets well conditioned
    level = x[k:-1] - np.mean(x[k:-1])
    cols = [np.ones(m), level] + [dx[k - i: len(dx) - i] for i in range(1, k + 1)]
    A = np.column_stack(cols)
    beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ beta
    s2 = resid @ resid / (m - A.shape[1])
    cov = s2 * np.linalg.inv(A.T @ A)
    stat = float(beta[1] / math.sqrt(cov[1, 1]))
    cv = adf_critical_values(m)
    if stat < cv["1%"]:
        band = "<0.01"
    elif stat < cv["5%"]:
        band = "0.01-0.05"
    elif stat < cv["10%"]:
        band = "0.05-0.10"
    else:
        band = ">0.10"
    return AdfResult(statistic=stat, lags=k, nobs=m, critical_values=cv, p_band=band)
