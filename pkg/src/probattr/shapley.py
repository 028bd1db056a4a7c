"""Shapley attributions for tree predictions.

The value of a feature coalition S is the model output with features in S
taken from the query x and all other features taken from a background
sample, averaged over the background set (interventional expectation).

``shapley_exact`` enumerates every coalition and is the reference.
``shapley_tree`` walks root-to-leaf paths of a fitted tree: for one
(query, background) pair only the features whose split routes x and z
differently matter, and a leaf reached with ``a`` such features taken
from x and ``b`` taken from z contributes to each x-feature with weight
(a-1)! b! / (a+b)! and to each z-feature with weight -a! (b-1)! / (a+b)!.
Background rows that follow identical routes are processed together.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .attribnet import max_workers
from .core import ProbAttrError, ShapeError
from .dtree import DecisionTree, fit, predict_dist, predict_index

MAX_EXACT_FEATURES = 20


def _coalition_weights(n: int) -> np.ndarray:
    # weight of a coalition of size s that excludes the feature being scored
    return np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n)
                     for s in range(n)])


def shapley_exact(model: Callable[[np.ndarray], np.ndarray], x, background) -> np.ndarray:
    """Brute-force Shapley values of a scalar black-box ``model`` at ``x``.

    ``model`` maps an (m, T) array to m outputs. Cost grows as 2^T coalitions times the background size.
    """
    x = np.asarray(x, dtype=np.float64)
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    n = x.shape[0]
    if n > MAX_EXACT_FEATURES:
        raise ValueError(f"exact enumeration is limited to {MAX_EXACT_FEATURES} features, got {n}")
    if background.shape[0] == 0:
        raise ValueError("empty background set")
    if background.shape[1] != n:
        raise ShapeError("background and query differ in dimension")

    masks = (np.arange(1 << n)[:, None] >> np.arange(n)) & 1  # row m = members of coalition m
    values = np.empty(1 << n)
    chunk = max(1, 200_000 // (background.shape[0] * max(n, 1)))
    for start in range(0, 1 << n, chunk):
        m = masks[start:start + chunk].astype(bool)
        hybrid = np.where(m[:, None, :], x, background[None, :, :])
        out = np.asarray(model(hybrid.reshape(-1, n)), dtype=np.float64)
        values[start:start + m.shape[0]] = out.reshape(m.shape[0], -1).mean(axis=1)

    w = _coalition_weights(n)
    sizes = masks.sum(axis=1)
    ids = np.arange(1 << n)
    phi = np.zeros(n)
    for k in range(n):
        without = ids[masks[:, k] == 0]
        phi[k] = np.sum(w[sizes[without]] * (values[without | (1 << k)] - values[without]))
    return phi


def tree_output(tree: DecisionTree, cls: int) -> Callable[[np.ndarray], np.ndarray]:
    """Black-box view of a tree returning the probability of class ``cls``."""
    return lambda X: predict_dist(tree, X)[:, cls]


def shapley_tree(tree: DecisionTree, x, background, cls: int | None = None) -> np.ndarray:
    """Interventional Shapley values of one tree prediction via path traversal.

    ``cls`` selects the explained class probability; by default the class the
    tree predicts for ``x``.
    """
    if tree is None or tree.n_nodes == 0:
        raise ProbAttrError("tree is not fitted")
    x = np.asarray(x, dtype=np.float64)
    Z = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if Z.shape[0] == 0:
        raise ValueError("empty background set")
    if x.shape != (tree.n_features,) or Z.shape[1] != tree.n_features:
        raise ShapeError(f"tree expects {tree.n_features} features")
    if cls is None:
        cls = int(predict_index(tree, x))
    leaf_value = tree.value[:, cls]
    depth = tree.depth()
    # a path holds at most `depth` distinct split features
    fact = [math.factorial(i) for i in range(depth + 1)]
    phi = np.zeros(tree.n_features)
    feature, threshold, left, right = tree.feature, tree.threshold, tree.left, tree.right

    def walk(node: int, rows: np.ndarray, from_x: tuple, from_z: tuple) -> None:
        if left[node] < 0:
            a, b = len(from_x), len(from_z)
            v = leaf_value[node] * rows.size
            if a:
                wx = v * fact[a - 1] * fact[b] / fact[a + b]
                for j in from_x:
                    phi[j] += wx
            if b:
                wz = v * fact[a] * fact[b - 1] / fact[a + b]
                for j in from_z:
                    phi[j] -= wz
            return
        j = feature[node]
        t = threshold[node]
        x_left = x[j] <= t
        if j in from_x:
            walk(left[node] if x_left else right[node], rows, from_x, from_z)
            return
        z_left = Z[rows, j] <= t
        if j in from_z:
            if z_left.any():
                walk(left[node], rows[z_left], from_x, from_z)
            if not z_left.all():
                walk(right[node], rows[~z_left], from_x, from_z)
            return
        same = z_left == x_left
        x_child = left[node] if x_left else right[node]
        z_child = right[node] if x_left else left[node]
        if same.any():
            walk(x_child, rows[same], from_x, from_z)
        if not same.all():
            diff = rows[~same]
            walk(x_child, diff, from_x + (j,), from_z)
            walk(z_child, diff, from_x, from_z + (j,))

    walk(0, np.arange(Z.shape[0]), (), ())
    return phi / Z.shape[0]


def base_value(tree: DecisionTree, background, cls: int) -> float:
    return float(np.mean(predict_dist(tree, background)[:, cls]))


def shapley_batch(tree: DecisionTree, X, background, cls: int | None = None) -> np.ndarray:
    """Shapley values for every row of X (rows are independent jobs)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    with ThreadPoolExecutor(max_workers=max_workers()) as pool:
        rows = list(pool.map(lambda x: shapley_tree(tree, x, background, cls), X))
    return np.array(rows).reshape(X.shape[0], tree.n_features)


@dataclass
class ShapleyReport:
    feature_names: list[str]
    feature_sets: list[str]
    seeds: list[int]
    per_run: np.ndarray  # (R, T) mean |phi| per run
    base_values: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.per_run.shape[0] < 1:
            raise ValueError("a report needs at least one run")
        if self.per_run.shape[1] != len(self.feature_names):
            raise ShapeError("per-run values do not match the feature names")

    @property
    def mean_abs(self) -> np.ndarray:
        return self.per_run.mean(axis=0)

    def ranking(self) -> list[int]:
        # stable sort keeps embedding order among equal values
        return list(np.argsort(-self.mean_abs, kind="stable"))

    def rows(self) -> list[tuple[str, str, float, int]]:
        mean = self.mean_abs
        return [(self.feature_names[j], self.feature_sets[j], float(mean[j]), rank)
                for rank, j in enumerate(self.ranking(), start=1)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["attribute", "set", "mean_abs_shapley", "rank"])
        for name, set_name, value, rank in self.rows():
            w.writerow([name, set_name, f"{value:.9g}", rank])
        return buf.getvalue()

    def plot_csv(self) -> str:
        """Bar-chart data: one labelled bar per attribute plus per-run values."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "value"] + [f"run_{s}" for s in self.seeds])
        for rank, j in enumerate(self.ranking()):
            w.writerow([self.feature_names[j], f"{self.mean_abs[j]:.9g}"]
                       + [f"{v:.9g}" for v in self.per_run[:, j]])
        return buf.getvalue()

    def to_text(self, top: int | None = None) -> str:
        rows = self.rows()[:top] if top else self.rows()
        width = max(len(r[0]) for r in rows)
        lines = [f"{'rank':>4}  {'attribute':<{width}}  mean|phi|",
                 f"{'-' * 4}  {'-' * width}  ---------"]
        lines += [f"{rank:>4}  {name:<{width}}  {value:.6f}" for name, _, value, rank in rows]
        lines.append(f"runs: {len(self.seeds)} (seeds {', '.join(map(str, self.seeds))})")
        return "\n".join(lines) + "\n"


def importance_report(X_train, y_train, X_dev, max_depth: int | None, seeds: Sequence[int],
                      feature_names: Sequence[str], feature_sets: Sequence[str] | None = None,
                      classes: Sequence | None = None, positive_class=None,
                      background=None) -> ShapleyReport:
    """Mean |Shapley| over dev utterances, averaged over one tree per seed.

    With ``positive_class`` set (detection) the explained output is that
    class's probability; otherwise it is the probability of each query's
    predicted class. The background defaults to the dev set itself.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one run")
    X_dev = np.asarray(X_dev, dtype=np.float64)
    background = X_dev if background is None else np.asarray(background, dtype=np.float64)
    per_run, bases = [], []
    for seed in seeds:
        tree = fit(X_train, y_train, max_depth, seed, classes)
        cls = None if positive_class is None else tree.classes.index(positive_class)
        phi = shapley_batch(tree, X_dev, background, cls)
        per_run.append(np.abs(phi).mean(axis=0))
        if cls is not None:
            bases.append(base_value(tree, background, cls))
        else:
            bases.append(float(np.mean([base_value(tree, background, int(c))
                                        for c in predict_index(tree, X_dev)])))
    names = list(feature_names)
    sets = list(feature_sets) if feature_sets is not None else [""] * len(names)
    return ShapleyReport(names, sets, seeds, np.array(per_run), bases)

