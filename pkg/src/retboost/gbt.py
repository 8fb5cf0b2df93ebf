"""Second-order gradient-boosted regression trees (squared error).

Split finding works on per-feature bins. In ``exact`` mode every distinct
training value is its own bin, so candidate thresholds are the midpoints
between consecutive distinct values present in the node. In ``histogram``
mode values are grouped into at most ``max_bins`` quantile bins; the two modes
coincide whenever a feature has no more distinct values than bins.

Ties between equal gains go to the lowest feature index, then the lowest
threshold. Gains that differ only by floating-point rounding of the gradient
sums (relative ``TIE_RTOL``) count as equal.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

SERIAL_FORMAT = "retboost-gbt/1"
# relative width of the band in which two split gains are treated as equal
TIE_RTOL = 1e-11


@dataclass(frozen=True)
class GbtParams:
    n_estimators: int = 100
    max_depth: int = 6
    learning_rate: float = 0.3
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    reg_alpha: float = 0.0
    reg_lambda: float = 1.0
    seed: int = 42
    split_mode: str = "histogram"
    max_bins: int = 256

    def __post_init__(self):
        if self.n_estimators < 0 or self.max_depth < 0:
            raise ValueError("n_estimators and max_depth must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        for name in ("subsample", "colsample_bytree"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        for name in ("gamma", "min_child_weight", "reg_alpha", "reg_lambda"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.split_mode not in ("exact", "histogram"):
            raise ValueError(f"unknown split_mode {self.split_mode!r}")
        if self.max_bins < 2:
            raise ValueError("max_bins must be >= 2")


@dataclass
class Tree:
    """Array-encoded binary tree; node 0 is the root.

    ``feature[i] == -1`` marks a leaf. Rows with ``x[feature] <= threshold``
    go left. ``value`` holds the leaf weight (before the learning rate).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    gain: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(v) for v in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "gain": [float(v) for v in self.gain],
            "value": [float(v) for v in self.value],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            gain=np.asarray(d["gain"], dtype=np.float64),
            value=np.asarray(d["value"], dtype=np.float64),
        )


@dataclass
class GbtModel:
    base_score: float
    trees: list
    learning_rate: float
    n_features: int
    feature_names: list = field(default_factory=list)
    feature_gain_totals: np.ndarray = None
    params: GbtParams = None

    def predict(self, X) -> np.ndarray:
        return predict_gbt(self, X)

    def to_json(self) -> str:
        """Structured-text dump: params, base score, trees and gain totals."""
        doc = {
            "format": SERIAL_FORMAT,
            "params": asdict(self.params) if self.params else None,
            "base_score": float(self.base_score),
            "learning_rate": float(self.learning_rate),
            "n_features": self.n_features,
            "feature_names": list(self.feature_names),
            "feature_gain_totals": [float(v) for v in self.feature_gain_totals],
            "trees": [t.to_dict() for t in self.trees],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GbtModel":
        doc = json.loads(text)
        if doc.get("format") != SERIAL_FORMAT:
            raise ValueError(f"unsupported model format {doc.get('format')!r}")
        return cls(
            base_score=doc["base_score"],
            trees=[Tree.from_dict(t) for t in doc["trees"]],
            learning_rate=doc["learning_rate"],
            n_features=doc["n_features"],
            feature_names=doc["feature_names"],
            feature_gain_totals=np.asarray(doc["feature_gain_totals"]),
            params=GbtParams(**doc["params"]) if doc["params"] else None,
        )


# ---------------------------------------------------------------- closed forms


def leaf_weight(G: float, H: float, reg_alpha: float = 0.0, reg_lambda: float = 1.0) -> float:
    """Optimal leaf weight ``-soft_threshold(G, alpha) / (H + lambda)``."""
    if not H > 0:
        raise ValueError(f"hessian sum must be positive, got {H}")
    return _leaf_weight(float(G), float(H), float(reg_alpha), float(reg_lambda))


@njit(cache=True)
def _soft(G, alpha):
    if G > alpha:
        return G - alpha
    if G < -alpha:
        return G + alpha
    return 0.0


@njit(cache=True)
def _leaf_weight(G, H, alpha, lam):
    return -_soft(G, alpha) / (H + lam)


@njit(cache=True)
def _score(G, H, alpha, lam):
    t = _soft(G, alpha)
    return t * t / (H + lam)


@njit(cache=True)
def _split_gain(GL, HL, GR, HR, alpha, lam, gamma):
    return 0.5 * (
        _score(GL, HL, alpha, lam) + _score(GR, HR, alpha, lam) - _score(GL + GR, HL + HR, alpha, lam)
    ) - gamma


def split_gain(GL, HL, GR, HR, reg_lambda=1.0, gamma=0.0, reg_alpha=0.0) -> float:
    """Loss reduction of splitting a node into (GL, HL) and (GR, HR)."""
    return float(_split_gain(float(GL), float(HL), float(GR), float(HR),
                             float(reg_alpha), float(reg_lambda), float(gamma)))


# --------------------------------------------------------------------- binning


@dataclass
class _Bins:
    codes: np.ndarray  # (p, n) int32, feature-major
    lo: np.ndarray  # (p, max_bins) smallest training value per bin
    hi: np.ndarray  # (p, max_bins) largest training value per bin
    nbins: np.ndarray  # (p,)


def _make_bins(X: np.ndarray, mode: str, max_bins: int) -> _Bins:
    n, p = X.shape
    per_feature = []
    for j in range(p):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        new = np.r_[True, xs[1:] != xs[:-1]]
        uniq = xs[new]
        if mode == "exact" or len(uniq) <= max_bins:
            upper = uniq
        else:
            # inverted-CDF quantiles at k/max_bins are order statistics
            pos = np.ceil(np.arange(1, max_bins) * n / max_bins).astype(np.int64) - 1
            upper = np.unique(np.append(xs[np.clip(pos, 0, n - 1)], uniq[-1]))
        sorted_codes = np.searchsorted(upper, xs, side="left")
        codes = np.empty(n, dtype=np.int32)
        codes[order] = sorted_codes
        first = np.flatnonzero(np.r_[True, sorted_codes[1:] != sorted_codes[:-1]])
        lo = np.empty(len(upper))
        lo[sorted_codes[first]] = xs[first]
        per_feature.append((codes, lo, upper))
    width = max(len(u) for _, _, u in per_feature)
    codes = np.empty((p, n), dtype=np.int32)
    lo = np.zeros((p, width))
    hi = np.zeros((p, width))
    nbins = np.empty(p, dtype=np.int64)
    for j, (c, l, u) in enumerate(per_feature):
        codes[j] = c
        lo[j, : len(l)] = l
        hi[j, : len(u)] = u
        nbins[j] = len(u)
    return _Bins(codes, lo, hi, nbins)


# --------------------------------------------------------------------- kernels


@njit(cache=True, nogil=True)
def _midpoint(a, b):
    m = a + 0.5 * (b - a)
    if m >= b or m < a:
        m = a
    return m


@njit(cache=True, nogil=True)
def _sort_small(src, n, dst):
    # insertion sort into dst; node-local bin lists are short
    if n > 48:
        dst[:n] = np.sort(src[:n])
        return
    for i in range(n):
        v = src[i]
        j = i - 1
        while j >= 0 and dst[j] > v:
            dst[j + 1] = dst[j]
            j -= 1
        dst[j + 1] = v


@njit(cache=True, nogil=True)
def _grow_tree(codes, lo, hi, nbins, grad, hess, rows, feats, max_depth, lam, alpha, gamma, mcw):
    max_nodes = 2 ** (max_depth + 1) - 1
    if max_nodes > 2 * len(rows) - 1:
        max_nodes = 2 * len(rows) - 1
    if max_nodes < 1:
        max_nodes = 1
    feature = np.full(max_nodes, -1, dtype=np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    gain = np.zeros(max_nodes)
    value = np.zeros(max_nodes)
    start = np.zeros(max_nodes, dtype=np.int64)
    stop = np.zeros(max_nodes, dtype=np.int64)
    depth = np.zeros(max_nodes, dtype=np.int64)

    idx = rows.copy()
    buf = np.empty_like(idx)
    width = lo.shape[1]
    hg = np.zeros(width)
    hh = np.zeros(width)
    hc = np.zeros(width, dtype=np.int64)
    touched = np.empty(width, dtype=np.int64)
    order = np.empty(width, dtype=np.int64)
    gbuf = np.empty(len(idx))
    hbuf = np.empty(len(idx))

    stop[0] = len(idx)
    n_nodes = 1
    node = 0
    while node < n_nodes:
        s = start[node]
        e = stop[node]
        G = 0.0
        H = 0.0
        for k in range(s, e):
            gbuf[k] = grad[idx[k]]
            hbuf[k] = hess[idx[k]]
            G += gbuf[k]
            H += hbuf[k]
        value[node] = _leaf_weight(G, H, alpha, lam)
        if depth[node] >= max_depth or e - s < 2:
            node += 1
            continue
        parent = _score(G, H, alpha, lam)
        best = 0.0
        best_f = -1
        best_a = -1
        best_b = -1
        for f in feats:
            nb = nbins[f]
            fc = codes[f]
            nt = 0
            dense = (e - s) * 4 >= nb
            if dense:
                for k in range(s, e):
                    c = fc[idx[k]]
                    hg[c] += gbuf[k]
                    hh[c] += hbuf[k]
                    hc[c] += 1
                for c in range(nb):
                    if hc[c] > 0:
                        order[nt] = c
                        nt += 1
            else:
                for k in range(s, e):
                    c = fc[idx[k]]
                    if hc[c] == 0:
                        touched[nt] = c
                        nt += 1
                    hg[c] += gbuf[k]
                    hh[c] += hbuf[k]
                    hc[c] += 1
                _sort_small(touched, nt, order)
            if nt > 1:
                GL = 0.0
                HL = 0.0
                for t in range(nt - 1):
                    c = order[t]
                    GL += hg[c]
                    HL += hh[c]
                    GR = G - GL
                    HR = H - HL
                    if HL < mcw or HR < mcw:
                        continue
                    g = 0.5 * (_score(GL, HL, alpha, lam) + _score(GR, HR, alpha, lam) - parent) - gamma
                    # gains equal up to rounding (e.g. two features inducing
                    # the same partition) count as ties and keep the earlier
                    # candidate
                    if g > 0.0 and (best_f < 0 or g > best + TIE_RTOL * (parent + abs(g) + abs(best))):
                        best = g
                        best_f = f
                        best_a = c
                        best_b = order[t + 1]
            for t in range(nt):
                c = order[t]
                hg[c] = 0.0
                hh[c] = 0.0
                hc[c] = 0
        if best_f < 0:
            node += 1
            continue
        # stable partition: left rows keep their order, then right rows
        nl = 0
        for k in range(s, e):
            if codes[best_f, idx[k]] <= best_a:
                buf[s + nl] = idx[k]
                nl += 1
        nr = 0
        for k in range(s, e):
            if codes[best_f, idx[k]] > best_a:
                buf[s + nl + nr] = idx[k]
                nr += 1
        for k in range(s, e):
            idx[k] = buf[k]
        feature[node] = best_f
        threshold[node] = _midpoint(hi[best_f, best_a], lo[best_f, best_b])
        gain[node] = best
        left[node] = n_nodes
        right[node] = n_nodes + 1
        start[n_nodes] = s
        stop[n_nodes] = s + nl
        start[n_nodes + 1] = s + nl
        stop[n_nodes + 1] = e
        depth[n_nodes] = depth[node] + 1
        depth[n_nodes + 1] = depth[node] + 1
        n_nodes += 2
        node += 1
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), gain[:n_nodes].copy(), value[:n_nodes].copy())


@njit(cache=True, nogil=True)
def _add_tree(X, feature, threshold, left, right, value, lr, out):
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = out[i] + lr * value[node]


# ------------------------------------------------------------------- public API


def _base_score(y: np.ndarray) -> float:
    # shifting by y[0] keeps a constant target exactly representable
    return float(y[0] + np.mean(y - y[0]))


def _check_xy(X, y=None):
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    if y is None:
        return X
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise ValueError(f"y shape {y.shape} does not match X rows {X.shape[0]}")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite values")
    return X, y


def fit_gbt(X, y, params: GbtParams | None = None, feature_names=None) -> GbtModel:
    """Fit a boosted ensemble of regression trees on squared error.

    Each round fits a tree to gradients ``pred - y`` with unit hessians. Rows
    are subsampled without replacement per round and columns per tree, both
    from a generator seeded with ``params.seed``.
    """
    params = params or GbtParams()
    X, y = _check_xy(X, y)
    n, p = X.shape
    if n < 2:
        raise ValueError("need at least 2 rows to fit")
    if p == 0:
        raise ValueError("need at least one feature")
    rng = np.random.default_rng(params.seed)
    bins = _make_bins(X, params.split_mode, params.max_bins)
    base = _base_score(y)
    pred = np.full(n, base)
    hess = np.ones(n)
    n_rows = max(1, int(round(params.subsample * n)))
    n_cols = max(1, int(round(params.colsample_bytree * p)))
    all_rows = np.arange(n, dtype=np.int64)
    all_cols = np.arange(p, dtype=np.int64)
    gains = np.zeros(p)
    trees = []
    lr = float(params.learning_rate)
    for _ in range(params.n_estimators):
        grad = pred - y
        rows = all_rows if n_rows == n else np.sort(rng.choice(n, n_rows, replace=False))
        cols = all_cols if n_cols == p else np.sort(rng.choice(p, n_cols, replace=False))
        arrays = _grow_tree(
            bins.codes, bins.lo, bins.hi, bins.nbins, grad, hess,
            rows.astype(np.int64), cols.astype(np.int64), int(params.max_depth),
            float(params.reg_lambda), float(params.reg_alpha), float(params.gamma),
            float(params.min_child_weight),
        )
        tree = Tree(*arrays)
        split = tree.feature >= 0
        np.add.at(gains, tree.feature[split], tree.gain[split])
        _add_tree(X, tree.feature, tree.threshold, tree.left, tree.right, tree.value, lr, pred)
        trees.append(tree)
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(p)]
    model = GbtModel(
        base_score=base, trees=trees, learning_rate=lr, n_features=p,
        feature_names=names, feature_gain_totals=gains, params=params,
    )
    model._train_pred = pred
    return model


def predict_gbt(model: GbtModel, X) -> np.ndarray:
    """``base_score + learning_rate * sum(tree outputs)``, accumulated tree by tree."""
    X = _check_xy(X)
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    out = np.full(X.shape[0], float(model.base_score))
    for t in model.trees:
        _add_tree(X, t.feature, t.threshold, t.left, t.right, t.value, model.learning_rate, out)
    return out


def gain_importance(model: GbtModel) -> list[tuple[str, float]]:
    """Features ranked by total split gain, descending; ties keep column order."""
    totals = np.asarray(model.feature_gain_totals, dtype=np.float64)
    order = sorted(range(len(totals)), key=lambda j: (-totals[j], j))
    return [(model.feature_names[j], float(totals[j])) for j in order]


def best_split(X, grad, reg_lambda=1.0, gamma=0.0, min_child_weight=1.0, reg_alpha=0.0,
               hess=None, split_mode="exact", max_bins=256):
    """Best single split of the given rows, or ``None`` if no split has gain > 0.

    Returns ``(feature, threshold, gain)``.
    """
    X = _check_xy(X)
    grad = np.asarray(grad, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    hess = np.ones(len(grad)) if hess is None else np.asarray(hess, dtype=np.float64)
    bins = _make_bins(X, split_mode, max_bins)
    tree = Tree(*_grow_tree(
        bins.codes, bins.lo, bins.hi, bins.nbins, grad, hess,
        np.arange(X.shape[0], dtype=np.int64), np.arange(X.shape[1], dtype=np.int64), 1,
        float(reg_lambda), float(reg_alpha), float(gamma), float(min_child_weight),
    ))
    if tree.feature[0] < 0:
        return None
    return int(tree.feature[0]), float(tree.threshold[0]), float(tree.gain[0])


def train_mse_path(model: GbtModel, X, y) -> np.ndarray:
    """Training MSE after each boosting round (index 0 is the base score)."""
    X, y = _check_xy(X, y)
    out = np.full(X.shape[0], float(model.base_score))
    path = [float(np.mean((out - y) ** 2))]
    for t in model.trees:
        _add_tree(X, t.feature, t.threshold, t.left, t.right, t.value, model.learning_rate, out)
        path.append(float(np.mean((out - y) ** 2)))
    return np.asarray(path)


def tree_depth(tree: Tree) -> int:
    def walk(i):
        if tree.feature[i] < 0:
            return 0
        return 1 + max(walk(tree.left[i]), walk(tree.right[i]))
    return walk(0)


__all__ = [
    "GbtParams", "GbtModel", "Tree", "fit_gbt", "predict_gbt", "gain_importance",
    "leaf_weight", "split_gain", "best_split", "train_mse_path", "tree_depth",
]
