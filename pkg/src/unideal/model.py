"""Decoupled MLP: a per-client feature extractor plus a shareable head.

The head is the trailing ``head_depth`` dense layers. Only head parameters are
exchanged by the head-sharing methods, so clients may use different
extractors as long as their head signatures agree.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, IncompatibleHeadError, InvalidInputError, ShapeError
from .nn import Batch, DenseLayer, GradientSet, backward, forward, init_layer

WIRE_FLOAT_BYTES = 4


@dataclass(frozen=True)
class Architecture:
    layer_dims: tuple[int, ...]
    head_depth: int = 1

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ConfigurationError("an architecture needs at least input and output dims")
        if any(d < 1 for d in dims):
            raise ConfigurationError(f"layer dims must be positive, got {dims}")
        if not 1 <= self.head_depth <= len(dims) - 1:
            raise ConfigurationError(
                f"head_depth {self.head_depth} outside [1, {len(dims) - 1}] for dims {dims}"
            )

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    def layer_shapes(self) -> list[tuple[int, int]]:
        """``(out_dim, in_dim)`` for every dense layer."""
        d = self.layer_dims
        return [(d[i + 1], d[i]) for i in range(len(d) - 1)]

    def head_signature(self) -> tuple[tuple[int, int], ...]:
        return tuple(self.layer_shapes()[-self.head_depth :])

    def extractor_signature(self) -> tuple[tuple[int, int], ...]:
        return tuple(self.layer_shapes()[: -self.head_depth])


def _param_count(shapes) -> int:
    return sum(o * i + o for o, i in shapes)


def head_fraction(arch: Architecture) -> tuple[int, int, float]:
    """Head parameter count, total parameter count, and their ratio."""
    head = _param_count(arch.head_signature())
    total = _param_count(arch.layer_shapes())
    return head, total, head / total


@dataclass(frozen=True)
class ParamSnapshot:
    """Immutable flat copy of a run of dense layers.

    Flattening order is layer-major; within a layer the weights (row-major,
    ``out x in``) come first, then the biases.
    """

    signature: tuple[tuple[int, int], ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        sig = tuple((int(o), int(i)) for o, i in self.signature)
        object.__setattr__(self, "signature", sig)
        vals = np.array(self.values, dtype=np.float64, copy=True).ravel()
        if vals.size != _param_count(sig):
            raise ShapeError(f"{vals.size} values for signature {sig}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_layers(cls, layers: Sequence[DenseLayer]) -> ParamSnapshot:
        sig = tuple((l.out_dim, l.in_dim) for l in layers)
        if not layers:
            return cls(sig, np.zeros(0))
        parts = []
        for l in layers:
            parts.append(l.weights.ravel())
            parts.append(l.biases)
        return cls(sig, np.concatenate(parts))

    def to_layers(self, activations: Sequence[str]) -> list[DenseLayer]:
        if len(activations) != len(self.signature):
            raise ShapeError("one activation per layer is required")
        out = []
        pos = 0
        for (o, i), act in zip(self.signature, activations):
            w = self.values[pos : pos + o * i].reshape(o, i).copy()
            pos += o * i
            b = self.values[pos : pos + o].copy()
            pos += o
            out.append(DenseLayer(w, b, act))
        return out

    @property
    def n_params(self) -> int:
        return self.values.size

    @property
    def nbytes(self) -> int:
        """Payload size on the wire (32-bit floats), used for accounting."""
        return WIRE_FLOAT_BYTES * self.values.size

    def to_bytes(self) -> bytes:
        """Serialize: uint32 layer count, (out, in) uint32 pairs, then float32 values, all little-endian."""
        header = struct.pack("<I", len(self.signature))
        for o, i in self.signature:
            header += struct.pack("<II", o, i)
        return header + self.values.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> ParamSnapshot:
        if len(data) < 4:
            raise ShapeError("truncated snapshot header")
        (n,) = struct.unpack_from("<I", data, 0)
        pos = 4
        if len(data) < pos + 8 * n:
            raise ShapeError("truncated snapshot signature")
        sig = []
        for _ in range(n):
            o, i = struct.unpack_from("<II", data, pos)
            pos += 8
            sig.append((o, i))
        expected = _param_count(sig)
        payload = data[pos:]
        if len(payload) != WIRE_FLOAT_BYTES * expected:
            raise ShapeError(f"payload holds {len(payload)} bytes, expected {WIRE_FLOAT_BYTES * expected}")
        vals = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        return cls(tuple(sig), vals)

    def equals(self, other: ParamSnapshot) -> bool:
        return self.signature == other.signature and np.array_equal(self.values, other.values)


# the shared object of the head-sharing methods
HeadSnapshot = ParamSnapshot


def _activations(n: int, last_identity: bool) -> list[str]:
    acts = ["relu"] * n
    if last_identity and n:
        acts[-1] = "identity"
    return acts


@dataclass
class DecoupledModel:
    arch: Architecture
    extractor: list[DenseLayer]
    head: list[DenseLayer]

    def __post_init__(self):
        if tuple((l.out_dim, l.in_dim) for l in self.extractor) != self.arch.extractor_signature():
            raise ShapeError("extractor layers do not match the architecture")
        if tuple((l.out_dim, l.in_dim) for l in self.head) != self.arch.head_signature():
            raise ShapeError("head layers do not match the architecture")

    @classmethod
    def init(cls, arch: Architecture, rng: np.random.Generator) -> DecoupledModel:
        shapes = arch.layer_shapes()
        acts = _activations(len(shapes), last_identity=True)
        layers = [init_layer(i, o, a, rng) for (o, i), a in zip(shapes, acts)]
        cut = len(layers) - arch.head_depth
        return cls(arch, layers[:cut], layers[cut:])

    @property
    def layers(self) -> list[DenseLayer]:
        return self.extractor + self.head

    def head_activations(self) -> list[str]:
        return [l.activation for l in self.head]

    def extractor_activations(self) -> list[str]:
        return [l.activation for l in self.extractor]

    def copy(self) -> DecoupledModel:
        return DecoupledModel(self.arch, [l.copy() for l in self.extractor], [l.copy() for l in self.head])

    def head_snapshot(self) -> ParamSnapshot:
        return ParamSnapshot.from_layers(self.head)

    def extractor_snapshot(self) -> ParamSnapshot:
        return ParamSnapshot.from_layers(self.extractor)

    def full_snapshot(self) -> ParamSnapshot:
        return ParamSnapshot.from_layers(self.layers)

    def head_layers_from(self, snap: ParamSnapshot) -> list[DenseLayer]:
        if snap.signature != self.arch.head_signature():
            raise IncompatibleHeadError(
                f"head signature {snap.signature} != model head {self.arch.head_signature()}"
            )
        return snap.to_layers(self.head_activations())

    def install_head(self, snap: ParamSnapshot) -> None:
        self.head = self.head_layers_from(snap)

    def install_extractor(self, snap: ParamSnapshot) -> None:
        if snap.signature != self.arch.extractor_signature():
            raise IncompatibleHeadError("extractor signature does not match the model")
        self.extractor = snap.to_layers(self.extractor_activations())

    def install_full(self, snap: ParamSnapshot) -> None:
        if snap.signature != tuple(self.arch.layer_shapes()):
            raise IncompatibleHeadError("parameter signature does not match the model")
        layers = snap.to_layers([l.activation for l in self.layers])
        cut = len(self.extractor)
        self.extractor, self.head = layers[:cut], layers[cut:]

    def set_layers(self, layers: Sequence[DenseLayer]) -> None:
        cut = len(self.extractor)
        self.extractor, self.head = list(layers[:cut]), list(layers[cut:])

    def features(self, x: np.ndarray) -> np.ndarray:
        return forward(self.extractor, x)[-1]

    def logits(self, x: np.ndarray) -> np.ndarray:
        return forward(self.head, self.features(x))[-1]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)


@dataclass
class DualForward:
    teacher_logits: np.ndarray
    student_logits: np.ndarray
    extractor_acts: list[np.ndarray]
    head_acts: list[np.ndarray]


def forward_dual(
    model: DecoupledModel, global_head: ParamSnapshot | Sequence[DenseLayer], batch: Batch
) -> DualForward:
    """Teacher (global head) and student (local head) logits on shared features."""
    if isinstance(global_head, ParamSnapshot):
        teacher = model.head_layers_from(global_head)
    else:
        teacher = list(global_head)
        if tuple((l.out_dim, l.in_dim) for l in teacher) != model.arch.head_signature():
            raise IncompatibleHeadError("teacher head layers do not match the model head")
    ext_acts = forward(model.extractor, batch.inputs)
    feats = ext_acts[-1]
    head_acts = forward(model.head, feats)
    teacher_logits = forward(teacher, feats)[-1]
    return DualForward(teacher_logits, head_acts[-1], ext_acts, head_acts)


def backward_student(model: DecoupledModel, fwd: DualForward, grad_student: np.ndarray) -> GradientSet:
    """Gradients for all trainable layers from dL/d(student logits).

    The teacher branch is treated as constant, so nothing flows through it.
    """
    head_grads, g_feat = backward(model.head, fwd.head_acts, grad_student)
    ext_grads, _ = backward(model.extractor, fwd.extractor_acts, g_feat)
    return GradientSet(ext_grads.weights + head_grads.weights, ext_grads.biases + head_grads.biases)


def generate_hetero_arch(
    rng_seed: int,
    in_dim: int,
    n_classes: int,
    depth_range: Sequence[int],
    width_range: Sequence[int],
    head_in_dim: int | None = None,
) -> Architecture:
    """Random hidden depth and widths drawn uniformly from inclusive ranges.

    When ``head_in_dim`` is given the last hidden width is pinned to it, so
    heads of differently shaped models stay interchangeable.
    """
    if in_dim < 1 or n_classes < 2:
        raise ConfigurationError("need in_dim >= 1 and at least two classes")
    dmin, dmax = (int(v) for v in depth_range)
    wmin, wmax = (int(v) for v in width_range)
    if dmin < 0 or dmax < dmin:
        raise ConfigurationError(f"invalid depth range {list(depth_range)}")
    if wmin < 1 or wmax < wmin:
        raise ConfigurationError(f"invalid width range {list(width_range)}")
    if head_in_dim is not None and dmin < 1:
        raise ConfigurationError("a pinned head input width needs at least one hidden layer")
    rng = np.random.default_rng(rng_seed)
    depth = int(rng.integers(dmin, dmax + 1))
    widths = [int(w) for w in rng.integers(wmin, wmax + 1, size=depth)]
    if head_in_dim is not None:
        widths[-1] = int(head_in_dim)
    return Architecture((in_dim, *widths, n_classes), head_depth=1)


def validate_arch_for(arch: Architecture, in_dim: int, n_classes: int) -> None:
    if arch.in_dim != in_dim or arch.n_classes != n_classes:
        raise InvalidInputError(
            f"architecture {arch.layer_dims} does not fit data with {in_dim} features and {n_classes} classes"
        )
