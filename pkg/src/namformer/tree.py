"""CART regression / binary-classification trees.

Used for target-aware bin boundaries and as the embedding probe.  Split
search is exhaustive over midpoints of consecutive distinct values and
vectorized over all features of a node at once.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TreeConfig:
    max_leaves: int | None = None
    min_samples_leaf: int = 1
    min_samples_split: int = 2
    max_depth: int | None = None
    task: str = "regression"

    def __post_init__(self):
        if self.max_leaves is not None and self.max_leaves < 1:
            raise ValueError("max_leaves must be positive")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be positive")
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")


PROBE_DEFAULTS = TreeConfig()


@dataclass
class Tree:
    """Flat array representation; ``feature == -1`` marks a leaf.

    Routing: go left when ``x[feature] < threshold``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    impurity: np.ndarray
    n_samples: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def thresholds(self, feature: int = 0) -> np.ndarray:
        return np.sort(self.threshold[self.feature == feature])

    def training_loss(self) -> float:
        """Sum over leaves of n_leaf * impurity (SSE, or n * Gini)."""
        leaf = self.feature < 0
        return float(np.sum(self.n_samples[leaf] * self.impurity[leaf]))

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            go_right = X[rows, np.where(internal, f, 0)] >= self.threshold[node]
            nxt = np.where(go_right, self.right[node], self.left[node])
            node = np.where(internal, nxt, node)
        return self.value[node]


def predict_tree(tree: Tree, x) -> float:
    return float(tree.predict(np.asarray(x, dtype=np.float64)[None, :])[0])


def _impurity(y: np.ndarray, task: str) -> float:
    if y.min() == y.max():
        return 0.0
    if task == "classification":
        p = y.mean()
        return 2.0 * p * (1.0 - p)
    return float(np.var(y))


def best_split(X: np.ndarray, y: np.ndarray, min_samples_leaf: int = 1):
    """Best (feature, threshold, gain) for one node, or None.

    ``gain`` is the decrease in summed squared error.  For 0/1 targets this
    is exactly half the decrease in n-weighted Gini impurity, so the same
    search serves both tasks.  Equal gains go to the smallest threshold,
    then the lowest feature index.
    """
    m, d = X.shape
    if m < 2 * min_samples_leaf:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ys = y[order]
    csum = np.cumsum(ys, axis=0)
    total = csum[-1]
    nl = np.arange(1, m, dtype=np.float64)[:, None]
    nr = m - nl
    sl = csum[:-1]
    sr = total - sl
    score = sl * sl / nl + sr * sr / nr
    valid = xs[1:] > xs[:-1]
    if min_samples_leaf > 1:
        ok = (nl >= min_samples_leaf) & (nr >= min_samples_leaf)
        valid &= ok
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf)
    best = score.max()
    parent = total[0] * total[0] / m
    gain = best - parent
    # gains at rounding level of the score are not real improvements
    if not gain > 1e-12 * float(np.sum(y * y)):
        return None
    cand_i, cand_f = np.nonzero(score == best)
    mids = 0.5 * (xs[cand_i, cand_f] + xs[cand_i + 1, cand_f])
    pick = np.lexsort((cand_f, mids))[0]
    return int(cand_f[pick]), float(mids[pick]), float(gain)


def fit_tree(X, y, config: TreeConfig = PROBE_DEFAULTS) -> Tree:
    """Greedy best-first CART growth."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("fit_tree: empty input")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"fit_tree: {X.shape[0]} rows but {y.shape[0]} targets")
    if np.isnan(X).any() or np.isnan(y).any():
        raise ValueError("fit_tree: NaN in input")
    if config.task == "classification" and not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("fit_tree: classification targets must be 0/1")

    feature, threshold, left, right, value, impurity, count = [], [], [], [], [], [], []

    def new_node(idx):
        yn = y[idx]
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(float(yn.mean()))
        impurity.append(_impurity(yn, config.task))
        count.append(len(idx))
        return len(feature) - 1

    def candidate(node, idx, depth):
        if len(idx) < max(config.min_samples_split, 2):
            return None
        if config.max_depth is not None and depth >= config.max_depth:
            return None
        if impurity[node] == 0.0:
            return None
        return best_split(X[idx], y[idx], config.min_samples_leaf)

    root_idx = np.arange(X.shape[0])
    root = new_node(root_idx)
    heap = []
    tick = 0
    split = candidate(root, root_idx, 0)
    if split is not None:
        heapq.heappush(heap, (-split[2], tick, root, root_idx, 0, split))
    n_leaves = 1
    limit = config.max_leaves if config.max_leaves is not None else np.inf
    while heap and n_leaves < limit:
        _, _, node, idx, depth, (f, thr, _) = heapq.heappop(heap)
        go_left = X[idx, f] < thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(li), new_node(ri)
        n_leaves += 1
        for child, cidx in ((left[node], li), (right[node], ri)):
            s = candidate(child, cidx, depth + 1)
            if s is not None:
                tick += 1
                heapq.heappush(heap, (-s[2], tick, child, cidx, depth + 1, s))

    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
        impurity=np.array(impurity, dtype=np.float64),
        n_samples=np.array(count, dtype=np.int64),
    )


@dataclass(frozen=True)
class Boundaries:
    thresholds: np.ndarray
    degenerate: bool = False


def extract_boundaries(x, y, max_bins: int, min_samples_leaf: int = 1) -> Boundaries:
    """Sorted split thresholds of a 1-d tree of ``max_bins`` leaves fit on (x, y).

    When the tree cannot split (constant target or fewer than two distinct
    x values) a single boundary at the midpoint of the x range is returned
    and flagged as degenerate.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size < 2:
        raise ValueError("extract_boundaries needs at least 2 observations")
    if max_bins < 2:
        raise ValueError("max_bins must be >= 2")
    tree = fit_tree(x[:, None], y, TreeConfig(max_leaves=max_bins, min_samples_leaf=min_samples_leaf))
    thr = np.unique(tree.thresholds(0))
    if thr.size == 0:
        return Boundaries(np.array([0.5 * (x.min() + x.max())]), degenerate=True)
    return Boundaries(thr, degenerate=False)
