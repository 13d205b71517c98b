"""Regression forest (CART with variance reduction), written from scratch.

Determinism contract: tree ``i`` draws its bootstrap sample and per-node
feature subsets from SplitMix64 seeded with ``seed XOR i``. Trees are
independent, so training on any number of threads yields the same forest.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .. import _prng
from .._validation import check_is_fitted, check_matrix, check_X_y, complete_rows
from ..errors import AllRowsIncomplete, InsufficientRows, InvalidSpec

LEAF = -1


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat binary tree. Node 0 is the root; ``feature == -1`` marks a leaf.

    Internal nodes send ``x[feature] <= threshold`` to ``left``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            xv = X[rows, np.where(internal, f, 0)]
            go_left = xv <= self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)
        return self.value[node]

    def to_dict(self) -> dict:
        return {
            "feature": [int(v) for v in self.feature],
            "threshold": [float(v) for v in self.threshold],
            "left": [int(v) for v in self.left],
            "right": [int(v) for v in self.right],
            "value": [float(v) for v in self.value],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Tree":
        return cls(
            feature=np.asarray(doc["feature"], dtype=np.int64),
            threshold=np.asarray(doc["threshold"], dtype=np.float64),
            left=np.asarray(doc["left"], dtype=np.int64),
            right=np.asarray(doc["right"], dtype=np.int64),
            value=np.asarray(doc["value"], dtype=np.float64),
        )

    def leaf_values(self) -> np.ndarray:
        return self.value[self.feature == LEAF]


def _mean(y: np.ndarray) -> float:
    # Clipped so rounding can never push a leaf outside its own samples.
    return float(np.clip(y[0] + np.mean(y - y[0]), y.min(), y.max()))


def _midpoint(a: float, b: float) -> float:
    m = a + (b - a) / 2.0
    # Adjacent floats: the midpoint may round onto b, which must go right.
    return m if a <= m < b else a


def best_split(x: np.ndarray, y: np.ndarray, min_samples_leaf: int):
    """Variance-minimising threshold on one feature.

    Returns ``(sse, threshold)`` for the best admissible cut, or ``None``.
    Candidates are midpoints between consecutive distinct sorted values that
    leave at least ``min_samples_leaf`` rows on each side; ties go to the
    smallest threshold.
    """
    n = x.size
    if n < 2 * min_samples_leaf:
        return None
    order = np.argsort(x, kind="stable")
    xs = x[order]
    yc = y[order] - y.mean()
    csum = np.cumsum(yc)
    csq = np.cumsum(yc * yc)
    i = np.arange(min_samples_leaf, n - min_samples_leaf + 1)
    valid = xs[i - 1] < xs[i]
    if not valid.any():
        return None
    i = i[valid]
    left_sse = csq[i - 1] - csum[i - 1] ** 2 / i
    right_sum = csum[-1] - csum[i - 1]
    right_sse = (csq[-1] - csq[i - 1]) - right_sum**2 / (n - i)
    total = left_sse + right_sse
    k = int(np.argmin(total))
    cut = i[k]
    return float(total[k]), _midpoint(float(xs[cut - 1]), float(xs[cut]))


def build_tree(
    X: np.ndarray,
    y: np.ndarray,
    rng: _prng.SplitMix64,
    *,
    max_depth: int | None,
    min_samples_leaf: int,
    mtry: int,
) -> Tree:
    """Grow one tree on ``(X, y)`` (already bootstrapped), depth first, left first."""
    p = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []
    stack = [(np.arange(y.size), 0, -1, False)]
    while stack:
        idx, depth, parent, is_right = stack.pop()
        node = len(feature)
        if parent >= 0:
            (right if is_right else left)[parent] = node
        yn = y[idx]
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(_mean(yn))
        if (max_depth is not None and depth >= max_depth) or idx.size < 2 * min_samples_leaf or np.all(yn == yn[0]):
            continue
        best = None
        for f in rng.sample_without_replacement(p, mtry):
            found = best_split(X[idx, f], yn, min_samples_leaf)
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], f, found[1])
        if best is None:
            continue
        _, f, thr = best
        feature[node] = f
        threshold[node] = thr
        go_left = X[idx, f] <= thr
        stack.append((idx[~go_left], depth + 1, node, True))
        stack.append((idx[go_left], depth + 1, node, False))
    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
    )


def tree_seed(seed: int, tree_index: int) -> int:
    return (seed ^ tree_index) & _prng.MASK64


class RandomForestRegressor(RegressorMixin, BaseEstimator):
    """Bootstrap-aggregated regression trees.

    Parameters
    ----------
    n_trees : int, default=100
    max_depth : int or None, default=None
        ``None`` grows until another stopping rule applies; ``0`` gives a
        single leaf predicting the training mean.
    min_samples_leaf : int, default=5
    mtry : int or None, default=None
        Features tried per split; ``None`` means ``ceil(p / 3)``.
    seed : int, default=0
        Unsigned 64-bit seed. Tree ``i`` uses SplitMix64 seeded ``seed ^ i``.
    n_jobs : int, default=1
        Threads used to grow trees. Has no effect on the result.

    Attributes
    ----------
    trees_ : list of Tree
    mtry_ : int
    n_train_, n_excluded_ : int
    """

    def __init__(self, n_trees=100, max_depth=None, min_samples_leaf=5, mtry=None, seed=0, n_jobs=1):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.mtry = mtry
        self.seed = seed
        self.n_jobs = n_jobs

    def _check_params(self, p: int) -> int:
        if self.n_trees < 1:
            raise InvalidSpec("n_trees must be at least 1")
        if self.min_samples_leaf < 1:
            raise InvalidSpec("min_samples_leaf must be at least 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise InvalidSpec("max_depth must be non-negative")
        mtry = math.ceil(p / 3) if self.mtry is None else int(self.mtry)
        if not 1 <= mtry <= p:
            raise InvalidSpec(f"mtry must lie in [1, {p}], got {mtry}")
        return mtry

    def fit(self, X, y):
        X, y = check_X_y(X, y, allow_missing=True)
        mtry = self._check_params(X.shape[1])
        ok = complete_rows(X, y)
        if not ok.any():
            raise AllRowsIncomplete("every training row has a MISSING feature or target")
        X, y = X[ok], y[ok]
        n = y.size
        if n < 2 * self.min_samples_leaf:
            raise InsufficientRows(
                f"{n} complete row(s); need at least 2 * min_samples_leaf = {2 * self.min_samples_leaf}"
            )

        def grow(i: int) -> Tree:
            rng = _prng.SplitMix64(tree_seed(self.seed, i))
            sample = np.array([rng.below(n) for _ in range(n)], dtype=np.int64)
            return build_tree(
                X[sample], y[sample], rng,
                max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf, mtry=mtry,
            )

        if self.n_jobs == 1:
            trees = [grow(i) for i in range(self.n_trees)]
        else:
            workers = None if self.n_jobs in (None, -1) else int(self.n_jobs)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                trees = list(pool.map(grow, range(self.n_trees)))
        self.trees_ = trees
        self.mtry_ = mtry
        self.n_features_in_ = X.shape[1]
        self.n_train_ = n
        self.n_excluded_ = int((~ok).sum())
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "trees_")
        X = check_matrix(X, allow_missing=True, n_features=self.n_features_in_)
        out = np.full(X.shape[0], np.nan)
        ok = complete_rows(X)
        if ok.any():
            per_tree = np.stack([t.predict(X[ok]) for t in self.trees_])
            mean = per_tree.sum(axis=0) / len(self.trees_)
            out[ok] = np.clip(mean, per_tree.min(axis=0), per_tree.max(axis=0))
        return out
