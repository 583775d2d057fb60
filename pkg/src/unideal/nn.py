"""Dense-network substrate: layers, losses, backprop, SGD, gradient checking.

All arithmetic is float64. Layers store weights as ``(out_dim, in_dim)`` so a
forward pass computes ``x @ W.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import GradientCheckError, InvalidInputError, ShapeError

ACTIVATIONS = ("relu", "identity")


@dataclass
class DenseLayer:
    weights: np.ndarray
    biases: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.biases.ndim != 1:
            raise ShapeError("weights must be 2-D and biases 1-D")
        if self.biases.shape[0] != self.weights.shape[0]:
            raise ShapeError(
                f"bias length {self.biases.shape[0]} != out_dim {self.weights.shape[0]}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_params(self) -> int:
        return self.weights.size + self.biases.size

    def copy(self) -> DenseLayer:
        return DenseLayer(self.weights.copy(), self.biases.copy(), self.activation)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.weights).all() and np.isfinite(self.biases).all())


def init_layer(in_dim: int, out_dim: int, activation: str, rng: np.random.Generator) -> DenseLayer:
    """Glorot-uniform weights, zero biases."""
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    w = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    return DenseLayer(w, np.zeros(out_dim), activation)


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ShapeError("batch inputs must be a 2-D matrix")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.inputs.shape[0]:
            raise ShapeError("label count must equal the number of input rows")
        if self.inputs.shape[0] < 1:
            raise InvalidInputError("batch must contain at least one sample")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, layers: Sequence[DenseLayer]) -> GradientSet:
        return cls([np.zeros_like(l.weights) for l in layers], [np.zeros_like(l.biases) for l in layers])

    def __len__(self) -> int:
        return len(self.weights)

    def flat(self) -> np.ndarray:
        parts = []
        for gw, gb in zip(self.weights, self.biases):
            parts.append(gw.ravel())
            parts.append(gb.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)


def _as_2d(logits) -> tuple[np.ndarray, bool]:
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim == 1:
        return np.ascontiguousarray(arr[None, :]), True
    if arr.ndim != 2:
        raise ShapeError("expected a vector or a matrix of logits")
    return np.ascontiguousarray(arr), False


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax of a vector, or of each row of a matrix."""
    z, was_vector = _as_2d(logits)
    if z.shape[1] == 0:
        raise ShapeError("softmax of an empty vector")
    if not np.isfinite(z).all():
        raise InvalidInputError("softmax input contains non-finite values")
    p = kernels.softmax_rows(z)
    return p[0] if was_vector else p


def kl_divergence(p, q) -> float:
    """KL(p || q) for two probability vectors; q is floored at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.ndim != 1 or q.ndim != 1 or p.shape != q.shape:
        raise ShapeError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    return float(kernels.row_kl(np.ascontiguousarray(p[None, :]), np.ascontiguousarray(q[None, :]))[0])


def cross_entropy_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Batch-mean cross-entropy and its gradient with respect to the logits."""
    z, _ = _as_2d(logits)
    y = np.ascontiguousarray(labels, dtype=np.int64).ravel()
    if y.shape[0] != z.shape[0]:
        raise ShapeError("label count must equal the number of logit rows")
    if z.shape[0] < 1:
        raise InvalidInputError("empty batch")
    if (y < 0).any() or (y >= z.shape[1]).any():
        raise InvalidInputError(f"labels must lie in [0, {z.shape[1]})")
    return kernels.cross_entropy(z, y)


def forward(layers: Sequence[DenseLayer], x: np.ndarray) -> list[np.ndarray]:
    """Return ``[x, a_1, ..., a_L]``; ``a_L`` is the network output."""
    acts = [x]
    for i, layer in enumerate(layers):
        if acts[-1].shape[1] != layer.in_dim:
            raise ShapeError(
                f"layer {i} expects {layer.in_dim} inputs, got {acts[-1].shape[1]}"
            )
        z = acts[-1] @ layer.weights.T + layer.biases
        if layer.activation == "relu":
            z = np.maximum(z, 0.0)
        acts.append(z)
    return acts


def backward(
    layers: Sequence[DenseLayer], acts: Sequence[np.ndarray], grad_out: np.ndarray
) -> tuple[GradientSet, np.ndarray]:
    """Backpropagate ``grad_out`` (dL/d output) through cached activations.

    Returns the parameter gradients and dL/d input.
    """
    if grad_out.shape != acts[-1].shape:
        raise ShapeError(f"output gradient shape {grad_out.shape} != output shape {acts[-1].shape}")
    n = len(layers)
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    g = grad_out
    for i in range(n - 1, -1, -1):
        layer = layers[i]
        if layer.activation == "relu":
            # derivative at exactly zero is taken as 0
            g = g * (acts[i + 1] > 0)
        gw[i] = g.T @ acts[i]
        gb[i] = g.sum(axis=0)
        g = g @ layer.weights
    return GradientSet(gw, gb), g


def forward_backward(
    layers: Sequence[DenseLayer],
    batch: Batch,
    loss_grad_at_output: np.ndarray | Callable[[np.ndarray], np.ndarray],
) -> tuple[list[np.ndarray], GradientSet]:
    """Forward the batch, then backpropagate the given output gradient.

    ``loss_grad_at_output`` may be an array or a callable mapping the network
    output to the gradient (handy when the gradient depends on the output).
    """
    acts = forward(layers, batch.inputs)
    grad = loss_grad_at_output(acts[-1]) if callable(loss_grad_at_output) else np.asarray(loss_grad_at_output, dtype=np.float64)
    grads, _ = backward(layers, acts, grad)
    return acts, grads


def sgd_step(layers: Sequence[DenseLayer], grads: GradientSet, lr: float) -> list[DenseLayer]:
    """Return new layers with ``p - lr * g`` applied to every parameter."""
    if len(grads) != len(layers):
        raise ShapeError(f"{len(grads)} gradient entries for {len(layers)} layers")
    out = []
    for layer, gw, gb in zip(layers, grads.weights, grads.biases):
        if gw.shape != layer.weights.shape or gb.shape != layer.biases.shape:
            raise ShapeError("gradient shape does not match its layer")
        out.append(DenseLayer(layer.weights - lr * gw, layer.biases - lr * gb, layer.activation))
    return out


def finite_diff_check(
    loss_evaluator: Callable[[list[np.ndarray]], tuple[float, list[np.ndarray]]],
    params: Sequence[np.ndarray],
    epsilon: float = 1e-6,
) -> float:
    """Compare analytic gradients against central differences.

    ``loss_evaluator(params)`` must return ``(loss, grads)`` with ``grads``
    shaped like ``params``. Returns the max over all coordinates of
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    base = [np.array(p, dtype=np.float64, copy=True).reshape(np.shape(p)) for p in params]
    loss0, analytic = loss_evaluator(base)
    if not np.isfinite(loss0):
        raise GradientCheckError(f"loss is not finite: {loss0}")
    worst = 0.0
    for k, p in enumerate(base):
        a = np.asarray(analytic[k], dtype=np.float64)
        if a.shape != p.shape:
            raise ShapeError(f"analytic gradient {k} has shape {a.shape}, expected {p.shape}")
        flat = p.reshape(-1)
        a_flat = a.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            up, _ = loss_evaluator(base)
            flat[j] = orig - epsilon
            down, _ = loss_evaluator(base)
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise GradientCheckError(f"non-finite loss while perturbing parameter {k}[{j}]")
            numeric = (up - down) / (2.0 * epsilon)
            worst = max(worst, abs(a_flat[j] - numeric) / max(1.0, abs(numeric)))
    return worst
