"""CART classification tree with Gini impurity.

Ties between equally good splits are broken by a random choice drawn from a
generator seeded with ``(seed, node position)``, so a tree grown to depth d
is exactly the depth-d truncation of a deeper tree grown with the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ShapeError

GAIN_TOL = 1e-12


@dataclass
class DecisionTree:
    """Flat node arrays; ``left[i] == -1`` marks a leaf.

    Every node keeps its training class counts, so leaves and internal nodes
    alike carry a class distribution.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray
    n_features: int
    classes: list = field(default_factory=list)
    max_depth: int | None = None
    seed: int = 0

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_classes(self) -> int:
        return self.counts.shape[1]

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    @property
    def value(self) -> np.ndarray:
        """Class distribution at every node."""
        return self.counts / self.counts.sum(axis=1, keepdims=True)

    def depth(self) -> int:
        def walk(node):
            if self.is_leaf(node):
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))
        return walk(0)

    def used_features(self) -> set[int]:
        return {int(self.feature[i]) for i in range(self.n_nodes) if not self.is_leaf(i)}

    def validate(self) -> None:
        n = self.n_nodes
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        while stack:
            node = stack.pop()
            if seen[node]:
                raise ShapeError(f"node {node} is reachable twice")
            seen[node] = True
            l, r = int(self.left[node]), int(self.right[node])
            if l < 0 and r < 0:
                continue
            if not (0 < l < n and 0 < r < n):
                raise ShapeError(f"node {node} has invalid children ({l}, {r})")
            if not 0 <= self.feature[node] < self.n_features:
                raise ShapeError(f"node {node} splits on feature {self.feature[node]}")
            stack.extend((r, l))
        if not seen.all():
            raise ShapeError(f"nodes {np.flatnonzero(~seen).tolist()} are unreachable")
        if np.any(self.counts < 0) or np.any(self.counts.sum(axis=1) <= 0):
            raise ShapeError("every node needs positive class counts")


def gini(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = 1.0 - np.sum(counts * counts, axis=-1) / (n * n)
    return np.where(n > 0, g, 0.0)


def split_candidates(X: np.ndarray, y: np.ndarray, n_classes: int):
    """Gini gain of every midpoint split, as (features, thresholds, gains) arrays."""
    n = y.size
    parent = gini(np.bincount(y, minlength=n_classes))
    feats, thrs, gains = [], [], []
    onehot = np.eye(n_classes, dtype=np.int64)[y]
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        cut = np.flatnonzero(xs[1:] != xs[:-1])
        if cut.size == 0:
            continue
        cum = np.cumsum(onehot[order], axis=0)
        left = cum[cut]
        right = cum[-1] - left
        nl = (cut + 1).astype(np.float64)
        nr = n - nl
        child = (nl * gini(left) + nr * gini(right)) / n
        feats.append(np.full(cut.size, j))
        thrs.append((xs[cut] + xs[cut + 1]) / 2.0)
        gains.append(parent - child)
    if not feats:
        return np.empty(0, int), np.empty(0), np.empty(0)
    return np.concatenate(feats), np.concatenate(thrs), np.concatenate(gains)


def best_split(X: np.ndarray, y: np.ndarray, n_classes: int, rng: np.random.Generator | None):
    feats, thrs, gains = split_candidates(X, y, n_classes)
    if feats.size == 0:
        return None
    top = np.flatnonzero(gains >= gains.max() - GAIN_TOL)
    pick = top[0] if top.size == 1 or rng is None else rng.choice(top)
    return int(feats[pick]), float(thrs[pick]), float(gains[pick])


def _encode_labels(y) -> tuple[np.ndarray, list]:
    classes, codes = np.unique(np.asarray(y), return_inverse=True)
    return codes.astype(np.int64), [c.item() if hasattr(c, "item") else c for c in classes]


def fit(X, y, max_depth: int | None = None, seed: int = 0, classes: Sequence | None = None) -> DecisionTree:
    """Grow a tree greedily until ``max_depth``, purity, or fewer than two samples.

    ``classes`` fixes the label order (defaults to the sorted unique labels).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty 2-D feature matrix")
    y = np.asarray(y)
    if y.shape[0] != X.shape[0]:
        raise ShapeError(f"{X.shape[0]} samples but {y.shape[0]} labels")
    if classes is None:
        codes, classes = _encode_labels(y)
    else:
        classes = list(classes)
        index = {c: i for i, c in enumerate(classes)}
        try:
            codes = np.array([index[v.item() if hasattr(v, "item") else v] for v in y], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"label {exc.args[0]!r} not in classes") from None
    k = len(classes)

    feature, threshold, left, right, counts = [], [], [], [], []

    def grow(idx: np.ndarray, depth: int, position: int) -> int:
        node = len(feature)
        c = np.bincount(codes[idx], minlength=k)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(c)
        if (max_depth is not None and depth >= max_depth) or idx.size < 2 or np.count_nonzero(c) == 1:
            return node
        rng = np.random.default_rng([seed, depth, position])
        split = best_split(X[idx], codes[idx], k, rng)
        if split is None:
            return node
        j, t, _ = split
        go_left = X[idx, j] <= t
        feature[node], threshold[node] = j, t
        left[node] = grow(idx[go_left], depth + 1, 2 * position)
        right[node] = grow(idx[~go_left], depth + 1, 2 * position + 1)
        return node

    grow(np.arange(X.shape[0]), 0, 1)
    return DecisionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                        np.array(counts, dtype=np.int64), X.shape[1], classes, max_depth, seed)


def truncate(tree: DecisionTree, max_depth: int | None) -> DecisionTree:
    """Cut a tree back to ``max_depth``; nodes at the limit become leaves."""
    feature, threshold, left, right, counts = [], [], [], [], []

    def copy(node: int, depth: int) -> int:
        new = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(tree.counts[node])
        if tree.is_leaf(node) or (max_depth is not None and depth >= max_depth):
            return new
        feature[new], threshold[new] = int(tree.feature[node]), float(tree.threshold[node])
        left[new] = copy(int(tree.left[node]), depth + 1)
        right[new] = copy(int(tree.right[node]), depth + 1)
        return new

    copy(0, 0)
    return DecisionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                        np.array(counts, dtype=np.int64), tree.n_features, list(tree.classes),
                        max_depth, tree.seed)


def apply(tree: DecisionTree, X) -> np.ndarray:
    """Leaf index reached by each row of X."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != tree.n_features:
        raise ShapeError(f"input has {X.shape[1]} features, tree expects {tree.n_features}")
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = ~np.array([tree.is_leaf(0)] * X.shape[0])
    while active.any():
        cur = node[active]
        go_left = X[active, tree.feature[cur]] <= tree.threshold[cur]
        node[active] = np.where(go_left, tree.left[cur], tree.right[cur])
        active = tree.left[node] >= 0
    return node[0] if single else node


def predict_dist(tree: DecisionTree, X) -> np.ndarray:
    return tree.value[apply(tree, X)]


def predict_index(tree: DecisionTree, X) -> np.ndarray:
    # argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(predict_dist(tree, X), axis=-1)


def predict(tree: DecisionTree, X):
    idx = predict_index(tree, X)
    if np.ndim(idx) == 0:
        return tree.classes[int(idx)]
    return np.array([tree.classes[i] for i in idx])


@dataclass
class DepthSearch:
    best_depth: int | None
    best_accuracy: float
    table: list[tuple[int | None, float]]
    tree: DecisionTree


def tune_max_depth(X_train, y_train, X_dev, y_dev, depths: Sequence[int | None], seed: int = 0,
                   classes: Sequence | None = None) -> DepthSearch:
    """Pick the depth with the best dev accuracy; ties go to the shallowest.

    ``None`` stands for unlimited depth and ranks deepest.
    """
    depths = list(depths)
    if not depths:
        raise ValueError("no candidate depths")
    deepest = None if None in depths else max(depths)
    full = fit(X_train, y_train, deepest, seed, classes)
    y_dev = np.asarray(y_dev)
    table, trees = [], []
    for d in depths:
        t = truncate(full, d)
        trees.append(t)
        table.append((d, float(np.mean(predict(t, X_dev) == y_dev))))

    def rank(i):
        d = depths[i]
        return (-table[i][1], np.inf if d is None else d)

    best = min(range(len(depths)), key=rank)
    return DepthSearch(depths[best], table[best][1], table, trees[best])


def render(tree: DecisionTree, feature_names: Sequence[str] | None = None) -> str:
    """Indented rule list with class counts at each leaf."""
    names = feature_names or [f"x{j}" for j in range(tree.n_features)]
    lines = []

    def counts_str(node):
        return ", ".join(f"{c}={n}" for c, n in zip(tree.classes, tree.counts[node]))

    def walk(node, indent):
        pad = "  " * indent
        if tree.is_leaf(node):
            label = tree.classes[int(np.argmax(tree.counts[node]))]
            lines.append(f"{pad}-> {label} [{counts_str(node)}]")
            return
        name, t = names[tree.feature[node]], tree.threshold[node]
        lines.append(f"{pad}if {name} <= {t:.6g}:")
        walk(tree.left[node], indent + 1)
        lines.append(f"{pad}else:  # {name} > {t:.6g}")
        walk(tree.right[node], indent + 1)

    walk(0, 0)
    return "\n".join(lines) + "\n"
