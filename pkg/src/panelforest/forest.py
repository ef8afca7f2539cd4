"""Regression random forest: bagged CART trees with random feature subsets.

Trees are grown with an exact split search (best threshold over midpoints
of sorted unique values, MSE criterion), which is affordable at the panel
sizes this package targets (a few hundred rows).  Each tree draws its
bootstrap sample and split features from its own counter-derived stream,
so the fitted forest is a pure function of (X, y, config) regardless of
how tree construction is scheduled.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ._rng import stream

__all__ = [
    "ForestConfig",
    "Tree",
    "Forest",
    "fit_forest",
    "predict",
    "oob_predictions",
    "oob_score",
    "OobScore",
    "r2_score",
    "mdi_importance",
    "forest_metrics",
    "ForestMetrics",
    "refit",
    "save_forest",
    "load_forest",
]


@dataclass(frozen=True)
class ForestConfig:
    """Forest hyperparameters.

    mtry=None means ceil(p / 3), the regression convention.  Bootstrap
    samples are drawn with replacement at `bootstrap_fraction` of n.
    """

    n_trees: int = 500
    mtry: int | None = None
    min_leaf: int = 5
    max_depth: int | None = None
    bootstrap_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if not (0 < self.bootstrap_fraction <= 1.0):
            raise ValueError("bootstrap_fraction must be in (0, 1]")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 when set")

    def resolve_mtry(self, p: int) -> int:
        m = self.mtry if self.mtry is not None else math.ceil(p / 3)
        if not (1 <= m <= p):
            raise ValueError(f"mtry must be in [1, {p}], got {m}")
        return m


@dataclass(frozen=True)
class Tree:
    """Array-encoded CART tree.

    feature[i] == -1 marks a leaf; value[i] is the node's training-target
    mean (the prediction for leaves), n_samples[i] the bootstrap-multiset
    size, sse_decrease[i] the split's reduction in total squared error.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    sse_decrease: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.intp)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.where(active)[0]
            feats = self.feature[node[idx]]
            thresh = self.threshold[node[idx]]
            go_left = X[idx, feats] <= thresh
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
            active = self.feature[node] >= 0
        return self.value[node]


@dataclass(frozen=True)
class Forest:
    """Fitted ensemble plus per-tree bootstrap bookkeeping for OOB scoring."""

    trees: tuple[Tree, ...]
    in_bag_counts: np.ndarray  # (n_trees, n_rows) bootstrap multiplicities
    feature_names: tuple[str, ...]
    config: ForestConfig
    y_min: float
    y_max: float
    n_rows: int


def _grow_tree(X: np.ndarray, y: np.ndarray, sample_idx: np.ndarray,
               cfg: ForestConfig, rng: np.random.Generator) -> Tree:
    p = X.shape[1]
    mtry = cfg.resolve_mtry(p)
    min_leaf = cfg.min_leaf

    feature, threshold, left, right = [], [], [], []
    value, n_samples, sse_dec = [], [], []

    def new_node(idx: np.ndarray) -> int:
        slot = len(feature)
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(float(np.mean(y[idx])))
        n_samples.append(len(idx))
        sse_dec.append(0.0)
        return slot

    root = new_node(sample_idx)
    stack = [(root, sample_idx, 0)]
    while stack:
        slot, idx, depth = stack.pop()
        n = len(idx)
        if n < 2 * min_leaf or (cfg.max_depth is not None and depth >= cfg.max_depth):
            continue
        yn = y[idx]
        total1 = float(yn.sum())
        total2 = float((yn**2).sum())
        parent_sse = total2 - total1 * total1 / n
        if parent_sse <= 0.0:
            continue  # pure node

        candidates = np.sort(rng.choice(p, size=mtry, replace=False))
        best = None  # (sse, feature, threshold, split_order, split_pos)
        for f in candidates:
            xf = X[idx, f]
            order = np.argsort(xf, kind="stable")
            xs = xf[order]
            ys = yn[order]
            # split after position i keeps i+1 samples on the left
            c1 = np.cumsum(ys)
            c2 = np.cumsum(ys**2)
            pos = np.arange(1, n)
            valid = (xs[:-1] < xs[1:]) & (pos >= min_leaf) & (n - pos >= min_leaf)
            if not valid.any():
                continue
            nl = pos.astype(np.float64)
            sse_l = c2[:-1] - c1[:-1] ** 2 / nl
            sse_r = (total2 - c2[:-1]) - (total1 - c1[:-1]) ** 2 / (n - nl)
            total = np.where(valid, sse_l + sse_r, np.inf)
            k = int(np.argmin(total))  # first minimum -> lowest threshold
            if not np.isfinite(total[k]):
                continue
            if best is None or total[k] < best[0]:
                thr = 0.5 * (xs[k] + xs[k + 1])
                best = (float(total[k]), int(f), float(thr), order, k)

        if best is None:
            continue
        sse, f, thr, order, k = best
        left_idx = idx[order[: k + 1]]
        right_idx = idx[order[k + 1:]]
        feature[slot] = f
        threshold[slot] = thr
        sse_dec[slot] = max(parent_sse - sse, 0.0)
        l_slot = new_node(left_idx)
        r_slot = new_node(right_idx)
        left[slot], right[slot] = l_slot, r_slot
        stack.append((r_slot, right_idx, depth + 1))
        stack.append((l_slot, left_idx, depth + 1))

    return Tree(np.asarray(feature, dtype=np.intp),
                np.asarray(threshold, dtype=np.float64),
                np.asarray(left, dtype=np.intp),
                np.asarray(right, dtype=np.intp),
                np.asarray(value, dtype=np.float64),
                np.asarray(n_samples, dtype=np.intp),
                np.asarray(sse_dec, dtype=np.float64))


def fit_forest(X: np.ndarray, y: np.ndarray, cfg: ForestConfig,
               feature_names: Sequence[str] | None = None) -> Forest:
    """Fit a regression forest on a clean (no missing values) matrix.

    Each tree i is grown on a bootstrap sample drawn from the stream
    (cfg.seed, i); identical inputs therefore give bit-identical forests.
    A constant target yields single-leaf trees, which is valid (downstream
    R-squared is an undefined marker).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-dimensional")
    n, p = X.shape
    if len(y) != n:
        raise ValueError(f"X has {n} rows but y has {len(y)}")
    if np.isnan(X).any() or np.isnan(y).any():
        raise ValueError("X and y must not contain missing values")
    if n < 2 * cfg.min_leaf:
        raise ValueError(f"need at least {2 * cfg.min_leaf} rows, got {n}")
    cfg.resolve_mtry(p)
    if feature_names is None:
        feature_names = tuple(f"x{i}" for i in range(p))
    elif len(feature_names) != p:
        raise ValueError("feature_names length must match X columns")

    n_boot = max(1, round(cfg.bootstrap_fraction * n))
    trees = []
    in_bag = np.zeros((cfg.n_trees, n), dtype=np.intp)
    for i in range(cfg.n_trees):
        rng = stream(cfg.seed, i)
        sample_idx = rng.integers(0, n, size=n_boot)
        in_bag[i] = np.bincount(sample_idx, minlength=n)
        trees.append(_grow_tree(X, y, np.sort(sample_idx), cfg, rng))
    return Forest(tuple(trees), in_bag, tuple(feature_names), cfg,
                  float(np.min(y)), float(np.max(y)), n)


def predict(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Arithmetic mean of per-tree predictions."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(forest.feature_names):
        raise ValueError(f"X must have {len(forest.feature_names)} columns")
    total = np.zeros(len(X))
    for tree in forest.trees:
        total += tree.predict(X)
    return total / len(forest.trees)


def r2_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """1 - RSS/TSS; NaN when TSS is zero (constant target)."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if len(y_true) != len(y_pred):
        raise ValueError("length mismatch")
    if len(y_true) < 2:
        raise ValueError("need at least 2 observations")
    tss = float(np.sum((y_true - np.mean(y_true)) ** 2))
    if tss == 0.0:
        return math.nan
    rss = float(np.sum((y_true - y_pred) ** 2))
    return 1.0 - rss / tss


@dataclass(frozen=True)
class OobScore:
    oob_r2: float
    oob_mse: float
    coverage_fraction: float


def oob_predictions(forest: Forest, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row mean prediction over trees where the row was out-of-bag.

    Returns (predictions, covered mask); uncovered rows are NaN.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if len(X) != forest.n_rows:
        raise ValueError("OOB scoring requires the training rows")
    totals = np.zeros(len(X))
    counts = np.zeros(len(X), dtype=np.intp)
    for i, tree in enumerate(forest.trees):
        oob = forest.in_bag_counts[i] == 0
        if not oob.any():
            continue
        totals[oob] += tree.predict(X[oob])
        counts[oob] += 1
    covered = counts > 0
    preds = np.full(len(X), np.nan)
    preds[covered] = totals[covered] / counts[covered]
    return preds, covered


def oob_score(forest: Forest, X: np.ndarray, y: np.ndarray) -> OobScore:
    """Out-of-bag R-squared and MSE over covered rows."""
    y = np.asarray(y, dtype=np.float64)
    preds, covered = oob_predictions(forest, X)
    if not covered.any():
        raise ValueError("no row is out-of-bag for any tree; increase n_trees")
    frac = float(covered.mean())
    mse = float(np.mean((y[covered] - preds[covered]) ** 2))
    return OobScore(r2_score(y[covered], preds[covered]), mse, frac)


def mdi_importance(forest: Forest) -> dict[str, float]:
    """Mean decrease in impurity per feature, normalized to sum to 1.

    A forest whose trees never split returns the all-zero vector (with a
    warning as the degenerate-case marker).
    """
    p = len(forest.feature_names)
    totals = np.zeros(p)
    for i, tree in enumerate(forest.trees):
        n_boot = int(forest.in_bag_counts[i].sum())
        internal = tree.feature >= 0
        np.add.at(totals, tree.feature[internal], tree.sse_decrease[internal] / n_boot)
    totals /= len(forest.trees)
    norm = totals.sum()
    if norm <= 0.0:
        warnings.warn("forest has no splits; MDI importance is identically zero",
                      stacklevel=2)
        return {name: 0.0 for name in forest.feature_names}
    return {name: float(v / norm) for name, v in zip(forest.feature_names, totals)}


@dataclass(frozen=True)
class ForestMetrics:
    r2: float
    adj_r2: float
    mse: float
    pseudo_f: float
    n_obs: int
    k: int


def forest_metrics(forest: Forest, X: np.ndarray, y: np.ndarray,
                   k: int | None = None) -> ForestMetrics:
    """R-squared, adjusted R-squared, MSE and the R-squared-based pseudo-F.

    The pseudo-F is (R2/k) / ((1-R2)/(n-k-1)) with k feature count; it is
    reported for comparability with linear fits, not as a calibrated test.
    Undefined quantities (n <= k+1, zero TSS, perfect fit) are NaN.
    """
    y = np.asarray(y, dtype=np.float64)
    k = k if k is not None else len(forest.feature_names)
    n = len(y)
    preds = predict(forest, X)
    r2 = r2_score(y, preds)
    mse = float(np.mean((y - preds) ** 2))
    if math.isnan(r2) or n <= k + 1:
        return ForestMetrics(r2, math.nan, mse, math.nan, n, k)
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - k - 1)
    pseudo_f = (r2 / k) / ((1.0 - r2) / (n - k - 1)) if r2 < 1.0 else math.inf
    return ForestMetrics(r2, adj, mse, pseudo_f, n, k)


def refit(forest: Forest, X: np.ndarray, y: np.ndarray, seed: int | None = None) -> Forest:
    """Fit a new forest with this forest's config (optionally reseeded)."""
    cfg = forest.config if seed is None else replace(forest.config, seed=seed)
    return fit_forest(X, y, cfg, forest.feature_names)


FOREST_FORMAT_VERSION = 1


def save_forest(forest: Forest, path) -> None:
    """Serialize a fitted forest for reproducibility audits.

    Structured-text format: a JSON document with a versioned header
    (config incl. seed, feature names) followed by per-tree node arrays
    and the in-bag multiplicities.
    """
    import json

    doc = {
        "format_version": FOREST_FORMAT_VERSION,
        "config": {
            "n_trees": forest.config.n_trees,
            "mtry": forest.config.mtry,
            "min_leaf": forest.config.min_leaf,
            "max_depth": forest.config.max_depth,
            "bootstrap_fraction": forest.config.bootstrap_fraction,
            "seed": forest.config.seed,
        },
        "feature_names": list(forest.feature_names),
        "n_rows": forest.n_rows,
        "y_min": forest.y_min,
        "y_max": forest.y_max,
        "in_bag_counts": forest.in_bag_counts.tolist(),
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": [None if math.isnan(v) else v for v in t.threshold],
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
                "n_samples": t.n_samples.tolist(),
                "sse_decrease": t.sse_decrease.tolist(),
            }
            for t in forest.trees
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))


def load_forest(path) -> Forest:
    """Load a forest written by :func:`save_forest`."""
    import json

    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != FOREST_FORMAT_VERSION:
        raise ValueError(f"unsupported forest format version {version!r}")
    trees = tuple(
        Tree(np.asarray(t["feature"], dtype=np.intp),
             np.asarray([math.nan if v is None else v for v in t["threshold"]],
                        dtype=np.float64),
             np.asarray(t["left"], dtype=np.intp),
             np.asarray(t["right"], dtype=np.intp),
             np.asarray(t["value"], dtype=np.float64),
             np.asarray(t["n_samples"], dtype=np.intp),
             np.asarray(t["sse_decrease"], dtype=np.float64))
        for t in doc["trees"]
    )
    return Forest(trees, np.asarray(doc["in_bag_counts"], dtype=np.intp),
                  tuple(doc["feature_names"]), ForestConfig(**doc["config"]),
                  float(doc["y_min"]), float(doc["y_max"]), int(doc["n_rows"]))
