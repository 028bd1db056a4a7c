"""Per-attribute-set softmax classifiers over CM embeddings.

Each network maps a CM embedding through two ReLU layers (64 and 32 units
by default) to a softmax over the attributes of one set. Training uses
Adam on categorical cross-entropy and keeps the epoch with the lowest
development EER.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (AttributeTaxonomy, NumericalError, ProbAttributeEmbedding, ShapeError,
                   ground_truth_index)
from .metrics import eer_multiclass

logger = logging.getLogger(__name__)

HIDDEN = (64, 32)


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    seed: int = 0
    hidden: tuple[int, ...] = HIDDEN

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass
class AttribNet:
    """Weights ``[W1, W2, W3]`` (out x in) and biases ``[b1, b2, b3]``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    name: str = ""

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be non-empty and paired")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: bias does not match weight rows")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i}: input width does not match previous layer")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def params(self) -> list[np.ndarray]:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def copy(self) -> "AttribNet":
        return AttribNet([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.name)

    @classmethod
    def init(cls, input_dim: int, output_dim: int, rng: np.random.Generator,
             hidden: Sequence[int] = HIDDEN, name: str = "") -> "AttribNet":
        dims = [input_dim, *hidden, output_dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, name)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(net: AttribNet, X: np.ndarray):
    acts = [X]
    h = X
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def forward(net: AttribNet, X) -> np.ndarray:
    """Attribute posteriors for one embedding (1-D) or a batch (2-D)."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != net.input_dim:
        raise ShapeError(f"embedding has dimension {X.shape[-1]}, network expects {net.input_dim}")
    return softmax(_forward(net, X)[-1])


def loss_and_grads(net: AttribNet, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch and gradients in ``net.params()`` order."""
    acts = _forward(net, X)
    probs = softmax(acts[-1])
    n = X.shape[0]
    picked = probs[np.arange(n), y]
    loss = -np.mean(np.log(np.maximum(picked, np.finfo(float).tiny)))
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = []
    for i in range(len(net.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(delta.T @ acts[i])
        if i:
            delta = (delta @ net.weights[i]) * (acts[i] > 0)
    grads.reverse()
    return float(loss), grads


class Adam:
    def __init__(self, params: list[np.ndarray], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


def as_float32(net: AttribNet) -> AttribNet:
    """Round weights to float32 so a saved network reproduces in-memory outputs."""
    return AttribNet([w.astype(np.float32).astype(np.float64) for w in net.weights],
                     [b.astype(np.float32).astype(np.float64) for b in net.biases], net.name)


@dataclass
class TrainResult:
    net: AttribNet
    best_epoch: int
    history: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def dev_eer_curve(self) -> list[float]:
        return [h[2] for h in self.history]


def train_attrib(X_train, y_train, X_dev, y_dev, n_classes: int, cfg: TrainConfig,
                 name: str = "") -> TrainResult:
    """Train one attribute classifier.

    ``y_*`` are integer attribute indices. Returns the checkpoint with the
    lowest dev EER (earliest epoch on ties) and the per-epoch history
    ``(epoch, train_loss, dev_eer)``.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    X_dev = np.asarray(X_dev, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    y_dev = np.asarray(y_dev, dtype=np.int64)
    if len(np.unique(y_train)) < 2:
        raise ValueError(f"{name or 'attribute set'}: training data has a single class")
    if X_dev.shape[0] == 0:
        raise ValueError(f"{name or 'attribute set'}: empty development set")
    rng = np.random.default_rng(cfg.seed)
    net = AttribNet.init(X_train.shape[1], n_classes, rng, cfg.hidden, name)
    opt = Adam(net.params(), cfg)
    dev_onehot = np.eye(n_classes)[y_dev]

    best, best_eer, best_epoch = None, np.inf, 0
    history = []
    n = X_train.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(net, X_train[idx], y_train[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"{name}: non-finite loss at epoch {epoch}, batch {b}")
            opt.step(grads)
            total += loss * idx.size
        dev_eer = eer_multiclass(forward(net, X_dev), dev_onehot)
        history.append((epoch, total / n, dev_eer))
        if dev_eer < best_eer:
            best, best_eer, best_epoch = net.copy(), dev_eer, epoch
    logger.info("%s: best dev EER %.4f at epoch %d", name, best_eer, best_epoch)
    return TrainResult(as_float32(best), best_epoch, history)


def max_workers() -> int:
    """Parallelism cap from ``ATTRIB_TRACE_THREADS`` (0 or unset = automatic)."""
    try:
        n = int(os.environ.get("ATTRIB_TRACE_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def train_all(tax: AttributeTaxonomy, X_train, attacks_train: Sequence[str], X_dev,
              attacks_dev: Sequence[str], cfg: TrainConfig) -> list[TrainResult]:
    """Train one network per attribute set on spoofed utterances only."""

    def job(i: int) -> TrainResult:
        y_tr = [ground_truth_index(a, tax, i) for a in attacks_train]
        y_dv = [ground_truth_index(a, tax, i) for a in attacks_dev]
        sub = TrainConfig(**{**cfg.__dict__, "seed": cfg.seed + i})
        return train_attrib(X_train, y_tr, X_dev, y_dv, tax.sets[i].size, sub, tax.sets[i].name)

    with ThreadPoolExecutor(max_workers=min(max_workers(), tax.n_sets)) as pool:
        return list(pool.map(job, range(tax.n_sets)))


def extract_embeddings(nets: Sequence[AttribNet], tax: AttributeTaxonomy, X,
                       utt_ids: Sequence[str] | None = None):
    """Concatenated per-set posteriors; returns an (n, T) array, or records if ids are given."""
    if len(nets) != tax.n_sets:
        raise ShapeError(f"got {len(nets)} networks for {tax.n_sets} attribute sets")
    for net, s in zip(nets, tax.sets):
        if net.output_dim != s.size:
            raise ShapeError(f"network for {s.name!r} outputs {net.output_dim}, set has {s.size}")
    X = np.asarray(X, dtype=np.float64)
    P = np.concatenate([forward(net, X) for net in nets], axis=-1)
    if utt_ids is None:
        return P
    return [ProbAttributeEmbedding(u, p) for u, p in zip(utt_ids, P)]
