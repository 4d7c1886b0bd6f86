"""Small numerical learning kernels: K-Means, min-max scaling, boosted trees, metrics.

The boosted-tree learner grows trees leaf-wise (best gain first) with exact
greedy splits over presorted feature values. Leaf weights are the regularised
Newton step ``-T_alpha(G) / (H + lambda)`` where ``T_alpha`` soft-thresholds
the gradient sum by ``reg_alpha``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

MODEL_FORMAT_VERSION = 1
BINARY = "binary"
REGRESSION = "regression"


# ---------------------------------------------------------------------------
# Clustering and scaling
# ---------------------------------------------------------------------------

def _check_finite(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def min_max_normalize(matrix) -> np.ndarray:
    """Scale each column to [0, 1]; constant columns become 0."""
    x = _check_finite(matrix, "matrix")
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        return x.copy()
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    out = np.zeros_like(x)
    ok = span > 0
    out[:, ok] = (x[:, ok] - lo[ok]) / span[ok]
    return out


def _sq_dist(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.maximum(d, 0.0)


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-8,
           return_history: bool = False):
    """Lloyd's algorithm from k-means++ seeding.

    Returns ``(assignments, centroids, inertia)``; with ``return_history``
    the per-iteration inertia list is appended. The effective number of
    clusters is ``min(k, distinct rows)``.
    """
    x = _check_finite(points, "points")
    if x.ndim == 1:
        x = x[:, None]
    if k < 1:
        raise ValueError("k must be >= 1")
    n = x.shape[0]
    if n == 0:
        raise ValueError("kmeans needs at least one row")
    k = min(k, len(np.unique(x, axis=0)))
    rng = np.random.default_rng(seed)

    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_dist(x, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        # distinct rows guarantee some positive distance while c < k
        idx = int(rng.choice(n, p=closest / total))
        centers[c] = x[idx]
        closest = np.minimum(closest, _sq_dist(x, centers[c:c + 1])[:, 0])

    history = []
    assign = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        dist = _sq_dist(x, centers)
        assign = dist.argmin(axis=1)
        history.append(float(dist[np.arange(n), assign].sum()))
        new = centers.copy()
        for c in range(k):
            members = assign == c
            if members.any():
                new[c] = x[members].mean(axis=0)
        empty = [c for c in range(k) if not (assign == c).any()]
        if empty:
            # move empty clusters onto the points worst served by the update
            d_new = _sq_dist(x, new).min(axis=1)
            for c in empty:
                far = int(np.argmax(d_new))
                new[c] = x[far]
                d_new[far] = 0.0
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift < tol:
            break
    dist = _sq_dist(x, centers)
    assign = dist.argmin(axis=1)
    inertia = float(dist[np.arange(n), assign].sum())
    history.append(inertia)
    if return_history:
        return assign, centers, inertia, history
    return assign, centers, inertia


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], len(values)]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + e + 1) / 2.0
    return ranks


def eval_metric(kind: str, labels, scores) -> float:
    """AUC (rank statistic, average ranks on ties) or RMSE."""
    y = np.asarray(labels, dtype=float)
    s = np.asarray(scores, dtype=float)
    if y.shape != s.shape or y.ndim != 1 or len(y) == 0:
        raise ValueError("labels and scores must be equal-length non-empty vectors")
    if kind == "rmse":
        return float(np.sqrt(np.mean((y - s) ** 2)))
    if kind != "auc":
        raise ValueError(f"unknown metric {kind!r}")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = _average_ranks(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # clipped so probabilities stay strictly inside (0, 1)
    return np.clip(0.5 * (1.0 + np.tanh(0.5 * z)), 1e-15, 1 - 1e-15)


# ---------------------------------------------------------------------------
# Boosted trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GbdtParams:
    objective: str = BINARY
    metric: str = "auc"
    learning_rate: float = 0.05
    num_leaves: int = 31
    max_depth: int = 5
    min_child_samples: int = 5
    subsample: float = 0.8
    subsample_freq: int = 1
    colsample_bytree: float = 0.8
    n_estimators: int = 600
    reg_alpha: float = 0.0
    reg_lambda: float = 0.0
    early_stopping_rounds: int = 50
    seed: int = 0
    min_child_weight: float = 1e-3

    def __post_init__(self) -> None:
        if self.objective not in (BINARY, REGRESSION):
            raise ValueError(f"objective must be binary or regression, got {self.objective!r}")
        if self.metric not in ("auc", "rmse"):
            raise ValueError(f"metric must be auc or rmse, got {self.metric!r}")
        if self.num_leaves < 2 or self.max_depth < 1 or self.n_estimators < 1:
            raise ValueError("need num_leaves >= 2, max_depth >= 1, n_estimators >= 1")
        if not (0 < self.subsample <= 1 and 0 < self.colsample_bytree <= 1):
            raise ValueError("subsample and colsample_bytree must lie in (0, 1]")
        if self.learning_rate <= 0 or self.reg_alpha < 0 or self.reg_lambda < 0:
            raise ValueError("learning_rate must be positive and regularisation non-negative")
        if self.min_child_samples < 1 or self.subsample_freq < 0 or self.early_stopping_rounds < 0:
            raise ValueError("min_child_samples >= 1, subsample_freq >= 0, early_stopping_rounds >= 0")


@dataclass
class Tree:
    """Flat array tree. Internal nodes have ``feature >= 0``; rows with
    ``x[feature] <= threshold`` go left."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)
    depth: list[int] = field(default_factory=list)

    def add(self, value: float, depth: int) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        self.depth.append(depth)
        return len(self.value) - 1

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f < 0)

    @property
    def max_depth(self) -> int:
        return max(self.depth)

    def predict(self, x: np.ndarray) -> np.ndarray:
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        node = np.zeros(len(x), dtype=int)
        rows = np.arange(len(x))
        while True:
            f = feature[node]
            internal = f >= 0
            if not internal.any():
                break
            r = rows[internal]
            nd = node[internal]
            go_left = x[r, f[internal]] <= threshold[nd]
            node[internal] = np.where(go_left, left[nd], right[nd])
        return np.asarray(self.value)[node]

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in ("feature", "threshold", "left", "right", "value", "depth")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(**{k: list(d[k]) for k in ("feature", "threshold", "left", "right", "value", "depth")})


@dataclass
class GbdtModel:
    trees: list[Tree]
    base_score: float
    objective: str
    best_iteration: int
    n_features: int
    params: GbdtParams | None = None
    feature_names: list[str] | None = None
    train_history: list[float] = field(default_factory=list)
    valid_history: list[float] = field(default_factory=list)
    degenerate: bool = False

    def to_json(self) -> str:
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "objective": self.objective,
            "base_score": self.base_score,
            "best_iteration": self.best_iteration,
            "n_features": self.n_features,
            "feature_names": self.feature_names,
            "params": asdict(self.params) if self.params else None,
            "degenerate": self.degenerate,
            "train_history": self.train_history,
            "valid_history": self.valid_history,
            "trees": [t.to_dict() for t in self.trees],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "GbdtModel":
        doc = json.loads(text)
        if doc.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format {doc.get('format_version')!r}")
        return cls(
            trees=[Tree.from_dict(t) for t in doc["trees"]],
            base_score=doc["base_score"],
            objective=doc["objective"],
            best_iteration=doc["best_iteration"],
            n_features=doc["n_features"],
            params=GbdtParams(**doc["params"]) if doc["params"] else None,
            feature_names=doc["feature_names"],
            train_history=doc["train_history"],
            valid_history=doc["valid_history"],
            degenerate=doc["degenerate"],
        )


def _soft(g: np.ndarray | float, alpha: float):
    if alpha == 0:
        return g
    return np.sign(g) * np.maximum(np.abs(g) - alpha, 0.0)


def _score(g, h, alpha: float, lam: float):
    t = _soft(g, alpha)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(h + lam > 0, t * t / (h + lam), 0.0)


class _TreeGrower:
    def __init__(self, x: np.ndarray, params: GbdtParams):
        self.x = x
        self.p = params

    def _best_split(self, order: np.ndarray, feats: np.ndarray, g: np.ndarray, h: np.ndarray | None):
        """Best split of a node whose rows sorted per feature are ``order`` (F x n).

        ``h`` is None for unit hessians (squared loss). Returns
        ``(gain, feature slot, threshold, left count)`` or None.
        """
        p = self.p
        n = order.shape[1]
        m = p.min_child_samples
        if n < 2 * m:
            return None
        lo, hi = m - 1, n - m  # slots k - 1 for left counts k in [m, n - m]
        cs = np.cumsum(g[order], axis=1)
        G = cs[0, -1]
        gl = cs[:, lo:hi]
        gr = G - gl
        if h is None:
            H = float(n)
            hl = np.arange(m, n - m + 1, dtype=float)
            hr = H - hl
        else:
            ch = np.cumsum(h[order], axis=1)
            H = ch[0, -1]
            hl = ch[:, lo:hi]
            hr = H - hl
        xs = self.x[order[:, lo:hi + 1], feats[:, None]]
        valid = xs[:, :-1] < xs[:, 1:]
        valid &= (hl >= p.min_child_weight) & (hr >= p.min_child_weight)
        if not valid.any():
            return None
        lam, alpha = p.reg_lambda, p.reg_alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            if alpha == 0:
                gain = gl * gl / (hl + lam) + gr * gr / (hr + lam)
            else:
                gain = _score(gl, hl, alpha, lam) + _score(gr, hr, alpha, lam)
        gain[~valid] = -np.inf
        flat = int(np.argmax(gain))
        best = gain.flat[flat] - float(_score(G, H, alpha, lam))
        if not best > 1e-12:
            return None
        fi, pos = divmod(flat, hi - lo)
        a, b = xs[fi, pos], xs[fi, pos + 1]
        thr = 0.5 * (a + b)
        if not a <= thr < b:
            thr = a
        return float(best), int(fi), float(thr), lo + pos + 1

    def _leaf_value(self, g: np.ndarray, h: np.ndarray | None) -> float:
        p = self.p
        G = float(g.sum())
        H = float(len(g)) if h is None else float(h.sum())
        denom = H + p.reg_lambda
        if denom <= 0:
            return 0.0
        return float(-_soft(G, p.reg_alpha) / denom * p.learning_rate)

    def grow(self, order: np.ndarray, feats: np.ndarray, g: np.ndarray, h: np.ndarray | None) -> Tree:
        p = self.p
        tree = Tree()

        def leaf(rows: np.ndarray) -> float:
            return self._leaf_value(g[rows], None if h is None else h[rows])

        root = tree.add(leaf(order[0]), 0)
        open_leaves = {}
        split = self._best_split(order, feats, g, h) if p.max_depth > 0 else None
        if split is not None:
            open_leaves[root] = (split, order)
        n_leaves = 1
        while open_leaves and n_leaves < p.num_leaves:
            # highest gain first; ties to the lowest node id
            node = max(open_leaves, key=lambda k: (open_leaves[k][0][0], -k))
            (gain, fi, thr, n_left), node_order = open_leaves.pop(node)
            f = int(feats[fi])
            rows = node_order[fi]
            go_left = np.zeros(self.x.shape[0], dtype=bool)
            go_left[rows[:n_left]] = True
            mask = go_left[node_order]
            left_order = node_order[mask].reshape(len(feats), n_left)
            right_order = node_order[~mask].reshape(len(feats), -1)
            depth = tree.depth[node] + 1
            li = tree.add(leaf(left_order[0]), depth)
            ri = tree.add(leaf(right_order[0]), depth)
            tree.feature[node] = f
            tree.threshold[node] = thr
            tree.left[node] = li
            tree.right[node] = ri
            n_leaves += 1
            if depth < p.max_depth:
                for child, child_order in ((li, left_order), (ri, right_order)):
                    s = self._best_split(child_order, feats, g, h)
                    if s is not None:
                        open_leaves[child] = (s, child_order)
        return tree


def _loss(objective: str, y: np.ndarray, raw: np.ndarray) -> float:
    if objective == BINARY:
        # mean log-loss on the raw margin, numerically stable
        return float(np.mean(np.logaddexp(0.0, raw) - y * raw))
    return float(np.mean((raw - y) ** 2))


def _metric_value(metric: str, objective: str, y: np.ndarray, raw: np.ndarray) -> float:
    pred = _sigmoid(raw) if objective == BINARY else raw
    return eval_metric(metric, y, pred)


def train_gbdt(x_train, y_train, x_valid=None, y_valid=None, params: GbdtParams | None = None,
               feature_names: list[str] | None = None) -> GbdtModel:
    """Stage-wise boosting with optional early stopping on a validation slice."""
    p = params or GbdtParams()
    x = _check_finite(x_train, "x_train")
    y = _check_finite(y_train, "y_train")
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError("x_train must be a non-empty 2-D matrix")
    if len(y) != x.shape[0]:
        raise ValueError("x_train and y_train lengths differ")
    n, n_feat = x.shape
    if p.objective == BINARY and not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("binary objective needs 0/1 labels")

    has_valid = x_valid is not None and len(x_valid) > 0
    if has_valid:
        xv = _check_finite(x_valid, "x_valid")
        yv = _check_finite(y_valid, "y_valid")
        if xv.shape[1] != n_feat or len(yv) != len(xv):
            raise ValueError("validation shape does not match training")

    degenerate = False
    if p.objective == BINARY:
        mean = float(y.mean())
        degenerate = mean in (0.0, 1.0)
        mean = min(max(mean, 1e-6), 1 - 1e-6)
        base = math.log(mean / (1 - mean))
    else:
        base = float(y.mean())
    if has_valid and p.metric == "auc" and len(np.unique(yv)) < 2:
        # validation AUC undefined: train to n_estimators without stopping
        degenerate = True
        has_valid = False

    raw = np.full(n, base)
    raw_v = np.full(len(xv), base) if has_valid else None
    higher_better = p.metric == "auc"
    rng = np.random.default_rng(p.seed)
    presorted = np.argsort(x, axis=0, kind="mergesort").T  # F x n
    grower = _TreeGrower(x, p)
    n_cols = max(1, int(round(p.colsample_bytree * n_feat)))
    n_rows = max(1, int(round(p.subsample * n)))

    trees: list[Tree] = []
    train_hist = [_loss(p.objective, y, raw)]
    valid_hist: list[float] = []
    best_val, best_iter, since_best = None, 0, 0
    in_bag = np.ones(n, dtype=bool)
    if not (p.objective == REGRESSION and float(np.ptp(y)) == 0.0):
        for it in range(p.n_estimators):
            if p.subsample < 1 and p.subsample_freq > 0 and it % p.subsample_freq == 0:
                in_bag = np.zeros(n, dtype=bool)
                in_bag[rng.choice(n, size=n_rows, replace=False)] = True
            feats = np.sort(rng.choice(n_feat, size=n_cols, replace=False)) if n_cols < n_feat else np.arange(n_feat)
            if p.objective == BINARY:
                prob = _sigmoid(raw)
                g, h = prob - y, prob * (1 - prob)
            else:
                g, h = raw - y, None
            order = presorted[feats]
            if not in_bag.all():
                order = order[in_bag[order]].reshape(len(feats), -1)
            tree = grower.grow(order, feats, g, h)
            trees.append(tree)
            raw = raw + tree.predict(x)
            train_hist.append(_loss(p.objective, y, raw))
            if has_valid:
                raw_v = raw_v + tree.predict(xv)
                v = _metric_value(p.metric, p.objective, yv, raw_v)
                valid_hist.append(v)
                improved = best_val is None or (v > best_val if higher_better else v < best_val)
                if improved:
                    best_val, best_iter, since_best = v, it + 1, 0
                else:
                    since_best += 1
                    if p.early_stopping_rounds and since_best >= p.early_stopping_rounds:
                        break
    best_iteration = best_iter if has_valid else len(trees)
    return GbdtModel(
        trees=trees,
        base_score=base,
        objective=p.objective,
        best_iteration=best_iteration,
        n_features=n_feat,
        params=p,
        feature_names=list(feature_names) if feature_names is not None else None,
        train_history=train_hist,
        valid_history=valid_hist,
        degenerate=degenerate,
    )


def predict_raw(model: GbdtModel, rows) -> np.ndarray:
    x = _check_finite(rows, "rows")
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got shape {x.shape}")
    raw = np.full(x.shape[0], model.base_score)
    for tree in model.trees[:model.best_iteration]:
        raw += tree.predict(x)
    return raw


def predict_gbdt(model: GbdtModel, rows) -> np.ndarray:
    """Scores from the first ``best_iteration`` trees; sigmoid-linked for binary models."""
    raw = predict_raw(model, rows)
    return _sigmoid(raw) if model.objective == BINARY else raw
