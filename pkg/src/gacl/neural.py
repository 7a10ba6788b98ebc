"""A small tanh/softmax multilayer perceptron trained with mini-batch SGD.

Weights are stored row-per-output-unit: layer ``l`` maps ``dims[l]`` inputs
to ``dims[l+1]`` outputs through ``W[l]`` of shape ``(dims[l+1], dims[l])``.
Every function here returns new arrays; inputs are never modified.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import DimensionError, DomainError, TrainingError

PROB_FLOOR = 1e-12

LabeledData = tuple[np.ndarray, np.ndarray]
DataSource = Union[LabeledData, Callable[[int], LabeledData]]


@dataclass
class Mlp:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    # True where a weight is live; None means nothing has been pruned
    masks: list[np.ndarray] | None = None

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> Mlp:
        return Mlp(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            None if self.masks is None else [m.copy() for m in self.masks],
        )


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, mlp: Mlp) -> Gradients:
        return cls([np.zeros_like(w) for w in mlp.weights], [np.zeros_like(b) for b in mlp.biases])

    def norm(self) -> float:
        return float(
            np.sqrt(sum(np.sum(g * g) for g in self.weights) + sum(np.sum(g * g) for g in self.biases))
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.weights + self.biases)


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.1
    mu: float = 0.0
    batch_size: int = 16
    epochs: int = 50
    decay_delta: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.eta < 0:
            raise DomainError("eta must be >= 0")
        if not 0.0 <= self.mu < 1.0:
            raise DomainError(f"mu={self.mu} outside [0, 1)")
        if not 0.0 <= self.decay_delta < 1.0:
            raise DomainError(f"decay_delta={self.decay_delta} outside [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise DomainError("batch_size and epochs must be positive")

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    grad_norm: float
    val_accuracy: float = float("nan")
    val_probs: np.ndarray | None = field(default=None, repr=False)


def mlp_init(layer_dims: Sequence[int], scale: float | None, rng: np.random.Generator) -> Mlp:
    """Uniform(-scale, scale) weights, zero biases.

    ``scale=None`` uses ``0.5 / sqrt(fan_in)`` per layer.
    """
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise DimensionError("need at least an input and an output layer")
    if any(d < 1 for d in dims):
        raise DimensionError(f"zero-width layer in {dims}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        s = 0.5 / np.sqrt(fan_in) if scale is None else scale
        weights.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(dims, weights, biases)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def forward(mlp: Mlp, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Class probabilities for one input vector or a batch of rows.

    The cache holds the activation of every layer, input first and the
    output probabilities last.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != mlp.layer_dims[0]:
        raise DimensionError(f"input width {x.shape[-1]}, network expects {mlp.layer_dims[0]}")
    if np.any(np.isnan(x)):
        raise DomainError("NaN in network input")
    acts = [x]
    a = x
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = a @ w.T + b
        a = softmax(z) if i == last else np.tanh(z)
        acts.append(a)
    return a, acts


def loss(class_probs: np.ndarray, label) -> float:
    """Cross-entropy, averaged when given a batch."""
    p = np.asarray(class_probs, dtype=float)
    if p.ndim == 1:
        return float(-np.log(max(p[int(label)], PROB_FLOOR)))
    labels = np.asarray(label, dtype=int)
    picked = p[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def backward(mlp: Mlp, cache: list[np.ndarray], label) -> Gradients:
    """Gradient of the (batch-mean) cross-entropy from a forward cache."""
    probs = cache[-1]
    single = probs.ndim == 1
    if single:
        cache = [a[None, :] for a in cache]
        probs = cache[-1]
        label = [label]
    labels = np.asarray(label, dtype=int)
    m = labels.size
    delta = probs.copy()
    delta[np.arange(m), labels] -= 1.0
    delta /= m
    gw: list[np.ndarray] = [None] * len(mlp.weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(mlp.weights)  # type: ignore[list-item]
    for layer in range(len(mlp.weights) - 1, -1, -1):
        a_in = cache[layer]
        gw[layer] = delta.T @ a_in
        gb[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ mlp.weights[layer]) * (1.0 - a_in * a_in)
    if mlp.masks is not None:
        gw = [g * msk for g, msk in zip(gw, mlp.masks)]
    return Gradients(gw, gb)


def sgd_step(
    mlp: Mlp, grads: Gradients, velocity: Gradients, cfg: TrainConfig
) -> tuple[Mlp, Gradients]:
    """``v <- mu v - eta g``; ``w <- (1 - decay) w + v``."""
    if not grads.is_finite():
        raise TrainingError("non-finite gradient")
    shrink = 1.0 - cfg.decay_delta
    vw = [cfg.mu * v - cfg.eta * g for v, g in zip(velocity.weights, grads.weights)]
    vb = [cfg.mu * v - cfg.eta * g for v, g in zip(velocity.biases, grads.biases)]
    new_w = [shrink * w + v for w, v in zip(mlp.weights, vw)]
    new_b = [shrink * b + v for b, v in zip(mlp.biases, vb)]
    if mlp.masks is not None:
        new_w = [w * m for w, m in zip(new_w, mlp.masks)]
        vw = [v * m for v, m in zip(vw, mlp.masks)]
    masks = None if mlp.masks is None else [m.copy() for m in mlp.masks]
    return Mlp(mlp.layer_dims, new_w, new_b, masks), Gradients(vw, vb)


def predict_proba(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    return forward(mlp, np.atleast_2d(x))[0]


def accuracy(mlp: Mlp, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.argmax(predict_proba(mlp, x), axis=1) == np.asarray(y)))


def _resolve(data: DataSource | None, epoch: int) -> LabeledData | None:
    if data is None:
        return None
    return data(epoch) if callable(data) else data


def train(
    mlp: Mlp,
    data: DataSource,
    cfg: TrainConfig,
    rng: np.random.Generator,
    val: DataSource | None = None,
    on_epoch: Callable[[int, Mlp], None] | None = None,
    keep_val_probs: bool = False,
) -> tuple[Mlp, list[EpochRecord]]:
    """Mini-batch SGD over ``cfg.epochs`` epochs.

    ``data`` and ``val`` are ``(X, y)`` pairs, or callables taking the
    1-based epoch number and returning one; the callable form lets labels
    change mid-training. Loss and accuracy are measured on the full training
    set at the end of each epoch; ``grad_norm`` is the mean per-batch
    gradient 2-norm seen during the epoch.
    """
    velocity = Gradients.zeros_like(mlp)
    records = []
    n_out = mlp.layer_dims[-1]
    for epoch in range(1, cfg.epochs + 1):
        x, y = _resolve(data, epoch)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=int)
        if x.shape[0] == 0:
            raise TrainingError("empty training set")
        if y.min() < 0 or y.max() >= n_out:
            raise TrainingError(f"labels outside [0, {n_out})")
        order = rng.permutation(x.shape[0])
        norms = []
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, cache = forward(mlp, x[idx])
            grads = backward(mlp, cache, y[idx])
            norms.append(grads.norm())
            mlp, velocity = sgd_step(mlp, grads, velocity, cfg)
        probs = predict_proba(mlp, x)
        rec = EpochRecord(
            epoch=epoch,
            loss=loss(probs, y),
            accuracy=float(np.mean(np.argmax(probs, axis=1) == y)),
            grad_norm=float(np.mean(norms)),
        )
        v = _resolve(val, epoch)
        if v is not None:
            vp = predict_proba(mlp, v[0])
            rec.val_accuracy = float(np.mean(np.argmax(vp, axis=1) == np.asarray(v[1])))
            if keep_val_probs:
                rec.val_probs = vp
        records.append(rec)
        if on_epoch is not None:
            on_epoch(epoch, mlp)
    return mlp, records


def prune_weights(mlp: Mlp, threshold: float) -> tuple[Mlp, float]:
    """Zero every weight with ``|w| < threshold`` and freeze it there.

    Biases are never pruned. Returns the pruned network and the fraction of
    weights now masked out.
    """
    if threshold < 0:
        raise DomainError("threshold must be >= 0")
    old = mlp.masks or [np.ones_like(w, dtype=bool) for w in mlp.weights]
    masks = [m & (np.abs(w) >= threshold) for m, w in zip(old, mlp.weights)]
    weights = [w * m for w, m in zip(mlp.weights, masks)]
    total = sum(m.size for m in masks)
    fraction = 1.0 - sum(int(m.sum()) for m in masks) / total
    return Mlp(mlp.layer_dims, weights, [b.copy() for b in mlp.biases], masks), fraction
