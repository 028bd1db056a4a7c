"""Equal error rate, accuracy and F1."""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import ShapeError


def _check_trials(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    if scores.shape != labels.shape:
        raise ShapeError("scores and labels differ in length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if labels.all() or not labels.any():
        raise ValueError("EER needs at least one positive and one negative trial")
    return scores, labels


def operating_points(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """False-rejection and false-acceptance rates at every distinct threshold.

    Point ``k`` accepts every trial at or above the k-th distinct score, so the
    first point accepts all trials (FRR 0, FAR 1) and the last rejects all.
    """
    scores, labels = _check_trials(scores, labels)
    # negatives first at equal score; only cuts between distinct scores count
    order = np.lexsort((labels, scores))
    s, y = scores[order], labels[order]
    n_pos = y.sum()
    n_neg = y.size - n_pos
    pos_below = np.concatenate(([0], np.cumsum(y)))
    neg_below = np.concatenate(([0], np.cumsum(~y)))
    cuts = np.concatenate(([0], np.flatnonzero(s[1:] != s[:-1]) + 1, [s.size]))
    frr = pos_below[cuts] / n_pos
    far = (n_neg - neg_below[cuts]) / n_neg
    return frr, far


def eer(scores, labels) -> float:
    """Equal error rate of binary trials (label True = positive, higher score = more positive)."""
    frr, far = operating_points(scores, labels)
    diff = frr - far
    k = int(np.argmax(diff >= 0))
    if k == 0:
        return float(frr[0])
    d0, d1 = diff[k - 1], diff[k]
    alpha = -d0 / (d1 - d0)
    return float(frr[k - 1] + alpha * (frr[k] - frr[k - 1]))


def eer_multiclass(scores, onehot, average: str = "micro") -> float:
    """One-vs-rest EER for an (n, K) score matrix against one-hot targets.

    ``micro`` pools all (class score, is-true-class) trials before a single
    EER; ``macro`` averages per-class EERs over classes having both kinds of
    trial.
    """
    scores = np.asarray(scores, dtype=np.float64)
    onehot = np.asarray(onehot).astype(bool)
    if scores.ndim != 2 or scores.shape != onehot.shape:
        raise ShapeError("scores and one-hot labels must be matching (n, K) arrays")
    if scores.shape[1] < 2:
        raise ValueError("need at least 2 classes")
    if average == "micro":
        return eer(scores.ravel(), onehot.ravel())
    if average == "macro":
        per_class = [eer(scores[:, k], onehot[:, k]) for k in range(scores.shape[1])
                     if onehot[:, k].any() and not onehot[:, k].all()]
        if not per_class:
            raise ValueError("no class has both positive and negative trials")
        return float(np.mean(per_class))
    raise ValueError(f"unknown average {average!r}")


def _check_pairs(pred: Sequence, true: Sequence) -> tuple[np.ndarray, np.ndarray]:
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise ShapeError(f"length mismatch: {pred.shape[0]} predictions vs {true.shape[0]} labels")
    if true.size == 0:
        raise ValueError("empty input")
    return pred, true


def accuracy(pred, true) -> float:
    pred, true = _check_pairs(pred, true)
    return float(np.mean(pred == true))


def f1_scores(pred, true) -> dict:
    """Exact per-class F1 (as ``Fraction``) for every class present in ``true``."""
    pred, true = _check_pairs(pred, true)
    out = {}
    for c in np.unique(true):
        tp = np.sum((pred == c) & (true == c))
        fp = np.sum((pred == c) & (true != c))
        fn = np.sum((pred != c) & (true == c))
        # 2PR/(P+R) rewritten over counts; zero when nothing was hit
        out[c.item()] = Fraction(0) if tp == 0 else Fraction(2 * int(tp), 2 * int(tp) + int(fp) + int(fn))
    return out


def f1_macro(pred, true) -> float:
    """Unweighted mean of per-class F1, rounded once from the exact rational value."""
    per_class = list(f1_scores(pred, true).values())
    return float(sum(per_class) / len(per_class))


def f1_micro(pred, true) -> float:
    # single-label micro F1 reduces to accuracy
    return accuracy(pred, true)


def f1(pred, true, average: str = "macro") -> float:
    if average == "macro":
        return f1_macro(pred, true)
    if average == "micro":
        return f1_micro(pred, true)
    raise ValueError(f"unknown average {average!r}")
