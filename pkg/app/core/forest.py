# app/core/forest.py
"""Bagged CART regression trees with a variance-reduction split criterion.

Trees are stored as flat node arrays (feature, threshold, left, right,
value) so a whole forest is a handful of numpy arrays. Leaves have
``feature == -1``. A row goes left when ``x[feature] <= threshold``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Union

import numpy as np

from app.core.errors import FitError
from app.core.linear import check_training_data
from app.core.seeding import derive_rng

logger = logging.getLogger(__name__)

LEAF = -1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int = 8
    min_leaf: int = 5
    features_per_split: Union[str, int, None] = "sqrt"
    bootstrap: bool = True
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 0 or self.min_leaf < 1 or self.n_jobs < 1:
            raise FitError(f"invalid forest parameters {self}")

    def candidates(self, n_features: int) -> int:
        k = self.features_per_split
        if k is None or k == "all":
            return n_features
        if k == "sqrt":
            return max(1, int(np.sqrt(n_features)))
        if isinstance(k, int) and k >= 1:
            return min(k, n_features)
        raise FitError(f"features_per_split must be 'sqrt', 'all' or a positive int, got {k!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _TreeBuilder:
    X: np.ndarray
    y: np.ndarray
    params: ForestParams
    rng: np.random.Generator
    n_candidates: int

    def __post_init__(self):
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.value: List[float] = []
        self.importance = np.zeros(self.X.shape[1])

    def _new_node(self, value: float) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(value)
        return len(self.value) - 1

    def best_split(self, idx: np.ndarray):
        """(feature, threshold, sse_after) minimizing the children's summed squared error."""
        min_leaf = self.params.min_leaf
        n = idx.size
        yi = self.y[idx]
        total, total_sq = yi.sum(), np.dot(yi, yi)
        features = self.rng.permutation(self.X.shape[1])[: self.n_candidates]
        k = np.arange(1, n)

        best = (None, 0.0, np.inf)
        for f in features:
            xs = self.X[idx, f]
            order = np.argsort(xs, kind="stable")
            xs_sorted, ys = xs[order], yi[order]
            left_sum = np.cumsum(ys)[:-1]
            left_sq = np.cumsum(ys * ys)[:-1]
            valid = (k >= min_leaf) & (n - k >= min_leaf) & (xs_sorted[:-1] < xs_sorted[1:])
            if not valid.any():
                continue
            sse = (left_sq - left_sum ** 2 / k) + ((total_sq - left_sq) - (total - left_sum) ** 2 / (n - k))
            sse = np.where(valid, sse, np.inf)
            pos = int(np.argmin(sse))
            if sse[pos] < best[2]:
                lo, hi = xs_sorted[pos], xs_sorted[pos + 1]
                threshold = 0.5 * (lo + hi)
                if threshold >= hi:
                    threshold = lo
                best = (int(f), float(threshold), float(sse[pos]))
        return best

    def grow(self, idx: np.ndarray, depth: int) -> int:
        yi = self.y[idx]
        node = self._new_node(float(yi.mean()))
        if depth >= self.params.max_depth or idx.size < 2 * self.params.min_leaf:
            return node
        node_sse = float(np.sum((yi - yi.mean()) ** 2))
        if node_sse <= 0.0:
            return node

        feature, threshold, sse = self.best_split(idx)
        if feature is None or node_sse - sse <= 1e-12 * max(1.0, node_sse):
            return node

        self.importance[feature] += node_sse - sse
        go_left = self.X[idx, feature] <= threshold
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.left[node] = self.grow(idx[go_left], depth + 1)
        self.right[node] = self.grow(idx[~go_left], depth + 1)
        return node

    def arrays(self) -> Dict[str, np.ndarray]:
        return {
            "feature": np.asarray(self.feature, dtype=np.int64),
            "threshold": np.asarray(self.threshold, dtype=float),
            "left": np.asarray(self.left, dtype=np.int64),
            "right": np.asarray(self.right, dtype=np.int64),
            "value": np.asarray(self.value, dtype=float),
        }


def build_tree(X: np.ndarray, y: np.ndarray, params: ForestParams, rng: np.random.Generator):
    n = X.shape[0]
    if params.bootstrap:
        sample = np.sort(rng.integers(0, n, size=n))
    else:
        sample = np.arange(n)
    builder = _TreeBuilder(X[sample], y[sample], params, rng, params.candidates(X.shape[1]))
    builder.grow(np.arange(n), 0)
    return builder.arrays(), builder.importance / n


def fit_forest_arrays(X: np.ndarray, y: np.ndarray, params: Optional[ForestParams] = None) -> Dict[str, np.ndarray]:
    """Fit ``params.n_trees`` trees; returns the concatenated node arrays.

    ``left``/``right`` hold global node indices and ``roots`` the root of
    each tree. Each tree draws from its own derived stream, so the result
    does not depend on ``n_jobs``.
    """
    params = params or ForestParams()
    X, y = check_training_data(X, y)
    if X.shape[0] < params.min_leaf:
        raise FitError(f"{X.shape[0]} rows cannot fill a leaf of {params.min_leaf}")

    def one(i: int):
        return build_tree(X, y, params, derive_rng(params.seed, f"tree-{i}"))

    if params.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=params.n_jobs) as executor:
            trees = list(executor.map(one, range(params.n_trees)))
    else:
        trees = [one(i) for i in range(params.n_trees)]

    roots, offset = [], 0
    parts: Dict[str, List[np.ndarray]] = {k: [] for k in ("feature", "threshold", "left", "right", "value")}
    for arrays, _ in trees:
        roots.append(offset)
        for key in ("feature", "threshold", "value"):
            parts[key].append(arrays[key])
        for key in ("left", "right"):
            child = arrays[key]
            parts[key].append(np.where(child == LEAF, LEAF, child + offset))
        offset += arrays["value"].size

    out = {k: np.concatenate(v) for k, v in parts.items()}
    out["roots"] = np.asarray(roots, dtype=np.int64)
    out["importance"] = np.mean([imp for _, imp in trees], axis=0)
    logger.info("Fitted forest of %d trees (%d nodes)", params.n_trees, offset)
    return out


def tree_predictions(arrays: Dict[str, np.ndarray], X: np.ndarray) -> np.ndarray:
    """Matrix of shape (n_trees, n_rows)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    feature, threshold = arrays["feature"], arrays["threshold"]
    left, right = arrays["left"], arrays["right"]
    nodes = np.repeat(arrays["roots"][:, None], X.shape[0], axis=1)
    cols = np.broadcast_to(np.arange(X.shape[0]), nodes.shape)

    while True:
        feat = feature[nodes]
        internal = feat != LEAF
        if not internal.any():
            break
        x = X[cols, np.where(internal, feat, 0)]
        step = np.where(x <= threshold[nodes], left[nodes], right[nodes])
        nodes = np.where(internal, step, nodes)
    return arrays["value"][nodes]


def predict_forest(arrays: Dict[str, np.ndarray], X: np.ndarray) -> np.ndarray:
    return tree_predictions(arrays, X).mean(axis=0)
