"""Random-forest regression and impurity-based parameter ranking.

Trees are CART regressors grown on bootstrap resamples.  At every node a
random subset of the features that still vary inside the node is scanned
for the split with the largest reduction in summed squared error; the scan
itself lives in :mod:`dbtune._core`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _core


@dataclass
class Tree:
    feature: np.ndarray      # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray        # mean target of the node
    n_samples: np.ndarray
    gain: np.ndarray         # weighted impurity decrease of the split, 0 at leaves

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                break
            r, nd = rows[inner], node[inner]
            go_left = X[r, feat[inner]] <= self.threshold[nd]
            node[inner] = np.where(go_left, self.left[nd], self.right[nd])
        return self.value[node]


@dataclass
class Forest:
    trees: list
    n_features: int
    n_trees: int = 100
    max_depth: int = 12
    min_leaf: int = 2
    feature_subsample: float = 1.0
    seed: int = 0
    bootstrap: bool = True

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.mean([t.predict(X) for t in self.trees], axis=0)


@dataclass
class ImportanceRanking:
    importances: np.ndarray
    order: np.ndarray = field(default=None)

    def __post_init__(self):
        self.importances = np.asarray(self.importances, dtype=float)
        if self.order is None:
            idx = np.arange(len(self.importances))
            self.order = np.lexsort((idx, -self.importances))


def _grow_tree(X: np.ndarray, y: np.ndarray, rows: np.ndarray, rng: np.random.Generator,
               max_depth: int, min_leaf: int, n_try_frac: float) -> Tree:
    feature, threshold, left, right, value, count, gain = [], [], [], [], [], [], []
    d = X.shape[1]
    # guards against splitting on rounding noise when the target is (nearly) constant
    tol = 1e-12 * max(1.0, float(np.sum(y[rows] ** 2)))

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(np.mean(y[idx])))
        count.append(len(idx))
        gain.append(0.0)
        return len(feature) - 1

    stack = [(new_node(rows), rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= max_depth or len(idx) < 2 * min_leaf:
            continue
        Xn = X[idx]
        varying = np.flatnonzero(Xn.max(axis=0) > Xn.min(axis=0))
        if len(varying) == 0:
            continue
        n_try = max(1, int(round(n_try_frac * d)))
        cand = rng.permutation(varying)[:n_try] if len(varying) > n_try else rng.permutation(varying)
        cols = Xn[:, cand].T
        order = np.argsort(cols, axis=1, kind="stable")
        xs = np.ascontiguousarray(np.take_along_axis(cols, order, axis=1))
        ys = np.ascontiguousarray(y[idx][order])
        row, pos, g = _core.best_split(xs, ys, min_leaf)
        if row < 0 or g <= tol:
            continue
        a, b = xs[row, pos], xs[row, pos + 1]
        thr = 0.5 * (a + b)
        if not a <= thr < b:
            thr = a
        f = int(cand[row])
        go_left = Xn[:, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node], gain[node] = f, float(thr), float(g)
        ln, rn = new_node(li), new_node(ri)
        left[node], right[node] = ln, rn
        stack.append((rn, ri, depth + 1))
        stack.append((ln, li, depth + 1))
    return Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right),
                np.array(value), np.array(count), np.array(gain))


def fit_forest(X: np.ndarray, y: np.ndarray, n_trees: int = 100, max_depth: int = 12, min_leaf: int = 2,
               feature_subsample: float = 1.0, seed: int = 0, bootstrap: bool = True) -> Forest:
    """Fit a regression forest on inputs normalized to [0, 1]."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, d) and y of length n")
    if len(X) < 2:
        raise ValueError("need at least 2 rows")
    if not 0 < feature_subsample <= 1:
        raise ValueError("feature_subsample must be in (0, 1]")
    n = len(X)
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        trees.append(_grow_tree(X, y, np.sort(rows), rng, max_depth, min_leaf, feature_subsample))
    return Forest(trees, X.shape[1], n_trees, max_depth, min_leaf, feature_subsample, seed, bootstrap)


def importance(forest: Forest) -> ImportanceRanking:
    """Mean decrease in impurity, summed over all trees and normalized to one.

    A forest without any split (constant target) ranks all features equally.
    """
    total = np.zeros(forest.n_features)
    for t in forest.trees:
        inner = t.feature >= 0
        np.add.at(total, t.feature[inner], t.gain[inner])
    s = total.sum()
    if s <= 0:
        return ImportanceRanking(np.full(forest.n_features, 1.0 / forest.n_features))
    return ImportanceRanking(total / s)


def select_by_coverage(ranking: ImportanceRanking, coverage: float) -> list[int]:
    """Shortest prefix of the ranking whose importance sum reaches ``coverage``."""
    if not 0 < coverage <= 1:
        raise ValueError("coverage must be in (0, 1]")
    if coverage >= 1.0:
        return [int(i) for i in ranking.order]
    cum = np.cumsum(ranking.importances[ranking.order])
    k = int(np.searchsorted(cum, coverage - 1e-12)) + 1
    return [int(i) for i in ranking.order[:min(k, len(cum))]]


def ranking_report(ranking: ImportanceRanking, names: Sequence[str]) -> list[dict]:
    cum = 0.0
    rows = []
    for i in ranking.order:
        cum += float(ranking.importances[i])
        rows.append({"name": names[i], "importance": float(ranking.importances[i]), "cumulative": cum})
    return rows


def write_ranking(ranking: ImportanceRanking, names: Sequence[str], path: str | Path,
                  meta: Optional[dict] = None) -> None:
    doc = {"_meta": meta or {}, "ranking": ranking_report(ranking, names)}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
