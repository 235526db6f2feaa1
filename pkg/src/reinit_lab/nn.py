"""Feedforward network engine over flat parameter vectors.

Dense ReLU networks whose parameters live in a single flat array with an
explicit layer/block layout. Forward passes, losses and exact gradients are
plain numpy. Everything here is a pure function of its inputs: identical
inputs give bit-identical outputs, so callers may share these freely across
workers. Computation runs in the dtype of the parameter vector — float32 in
normal training, float64 when a caller needs oracle-grade precision.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, NumericalError, ShapeError

ROLE_WEIGHT = "weight"
ROLE_BIAS = "bias"


@dataclass(frozen=True)
class Segment:
    """One contiguous run of the flat vector: a layer's weights or biases."""

    layer_id: int
    role: str
    offset: int
    length: int
    fan_in: int
    fan_out: int


@dataclass(frozen=True)
class LayerLayout:
    """Placement of each layer in the flat vector plus block ownership.

    ``block_assignment`` maps layer_id to a 1-based block index. Blocks must
    be contiguous in depth: a layer's block index never decreases as depth
    increases, and every block in 1..K is non-empty.
    """

    segments: tuple[Segment, ...]
    block_assignment: Mapping[int, int]

    def __post_init__(self):
        offset = 0
        for seg in self.segments:
            if seg.role not in (ROLE_WEIGHT, ROLE_BIAS):
                raise ConfigurationError(f"unknown segment role {seg.role!r}")
            if seg.offset != offset:
                raise ConfigurationError(
                    f"segments must tile the vector: segment at offset {seg.offset}, expected {offset}"
                )
            if seg.length < 1:
                raise ConfigurationError("empty parameter segment")
            offset += seg.length
        layer_ids = {seg.layer_id for seg in self.segments}
        missing = layer_ids - set(self.block_assignment)
        if missing:
            raise ConfigurationError(f"layers missing a block assignment: {sorted(missing)}")
        blocks = sorted(set(self.block_assignment[i] for i in layer_ids))
        if blocks != list(range(1, len(blocks) + 1)):
            raise ConfigurationError(f"block indices must form 1..K, got {blocks}")
        prev = 0
        for lid in sorted(layer_ids):
            b = self.block_assignment[lid]
            if b < prev:
                raise ConfigurationError("blocks must be contiguous in depth order")
            prev = b

    @property
    def total_len(self) -> int:
        last = self.segments[-1]
        return last.offset + last.length

    @property
    def num_blocks(self) -> int:
        return max(self.block_assignment.values())

    def layer_ids(self) -> list[int]:
        return sorted({seg.layer_id for seg in self.segments})

    def block_of(self, layer_id: int) -> int:
        return self.block_assignment[layer_id]

    def last_layer_of_block(self, block: int) -> int:
        layers = [lid for lid, b in self.block_assignment.items() if b == block]
        if not layers:
            raise ConfigurationError(f"block {block} has no layers")
        return max(layers)

    def block_param_indices(self, block: int) -> np.ndarray:
        """Flat indices of every parameter owned by the given block."""
        parts = [
            np.arange(seg.offset, seg.offset + seg.length)
            for seg in self.segments
            if self.block_assignment[seg.layer_id] == block
        ]
        if not parts:
            raise ConfigurationError(f"block {block} has no parameters")
        return np.concatenate(parts)


@dataclass
class ParamVector:
    """Flat parameter store tied to a layout. Treat as immutable."""

    values: np.ndarray
    layout: LayerLayout

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 1:
            raise ShapeError(f"parameter vector must be 1-D, got shape {self.values.shape}")
        if self.values.shape[0] != self.layout.total_len:
            raise ShapeError(
                f"parameter vector length {self.values.shape[0]} != layout length {self.layout.total_len}"
            )
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("parameter vector contains non-finite entries")

    @property
    def dtype(self):
        return self.values.dtype

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a fully-connected ReLU classifier.

    ``block_boundaries`` lists the layer indices that start a new block, so
    boundaries (1, 2) on a three-layer net yield blocks {0}, {1}, {2}. An
    empty tuple means the whole network is one block.
    """

    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    activation: str = "relu"
    block_boundaries: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        object.__setattr__(self, "block_boundaries", tuple(int(b) for b in self.block_boundaries))
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        if any(d < 1 for d in dims):
            raise ConfigurationError(f"all dimensions must be >= 1, got {dims}")
        if self.activation != "relu":
            raise ConfigurationError(f"unsupported activation {self.activation!r}")
        n = self.num_layers
        bounds = self.block_boundaries
        if list(bounds) != sorted(set(bounds)):
            raise ConfigurationError(f"block boundaries must be strictly increasing, got {bounds}")
        if bounds and (bounds[0] < 1 or bounds[-1] > n - 1):
            raise ConfigurationError(f"block boundaries {bounds} outside layer range 1..{n - 1}")

    @property
    def num_layers(self) -> int:
        return len(self.hidden_dims) + 1

    @property
    def num_blocks(self) -> int:
        return len(self.block_boundaries) + 1

    def layer_dims(self) -> list[tuple[int, int]]:
        ins = (self.input_dim, *self.hidden_dims)
        outs = (*self.hidden_dims, self.num_classes)
        return list(zip(ins, outs))

    def block_of_layer(self, layer_id: int) -> int:
        return 1 + sum(1 for b in self.block_boundaries if b <= layer_id)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "num_classes": self.num_classes,
            "activation": self.activation,
            "block_boundaries": list(self.block_boundaries),
        }

    @staticmethod
    def from_dict(d: Mapping) -> "NetworkSpec":
        return NetworkSpec(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(d["hidden_dims"]),
            num_classes=int(d["num_classes"]),
            activation=d.get("activation", "relu"),
            block_boundaries=tuple(d.get("block_boundaries", ())),
        )


@dataclass(frozen=True)
class InitDistribution:
    """Deterministic parameter initializer: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
    for weights, zeros for biases. The seed fully determines the draw."""

    seed: int
    scheme: str = "uniform_fan_in"

    def __post_init__(self):
        if self.scheme != "uniform_fan_in":
            raise ConfigurationError(f"unsupported init scheme {self.scheme!r}")


@dataclass(frozen=True)
class FrozenNormLayer:
    """Per-unit standardization inserted after a block; has no trainable parameters."""

    insert_after_block: int
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean)
        std = np.asarray(self.std)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ShapeError(f"mean/std must be matching 1-D vectors, got {mean.shape} and {std.shape}")
        if not np.all(std > 0):
            raise NumericalError("frozen norm layer std entries must be positive")


@lru_cache(maxsize=64)
def build_layout(spec: NetworkSpec) -> LayerLayout:
    """Lay the network's weights and biases out in depth order."""
    segments = []
    offset = 0
    assignment = {}
    for layer_id, (fan_in, fan_out) in enumerate(spec.layer_dims()):
        segments.append(Segment(layer_id, ROLE_WEIGHT, offset, fan_in * fan_out, fan_in, fan_out))
        offset += fan_in * fan_out
        segments.append(Segment(layer_id, ROLE_BIAS, offset, fan_out, fan_in, fan_out))
        offset += fan_out
        assignment[layer_id] = spec.block_of_layer(layer_id)
    return LayerLayout(tuple(segments), assignment)


def init_params(spec: NetworkSpec, dist: InitDistribution, dtype=np.float32) -> ParamVector:
    """Sample fresh parameters. Bit-identical for identical (spec, dist, dtype)."""
    layout = build_layout(spec)
    rng = np.random.Generator(np.random.PCG64(dist.seed & 0xFFFFFFFFFFFFFFFF))
    values = np.empty(layout.total_len, dtype=dtype)
    for seg in layout.segments:
        sl = slice(seg.offset, seg.offset + seg.length)
        if seg.role == ROLE_WEIGHT:
            bound = 1.0 / np.sqrt(seg.fan_in)
            values[sl] = rng.uniform(-bound, bound, seg.length).astype(dtype)
        else:
            values[sl] = 0.0
    return ParamVector(values, layout)


def _check_forward_args(spec: NetworkSpec, params: ParamVector, inputs: np.ndarray) -> np.ndarray:
    x = np.asarray(inputs)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"inputs must be (batch, {spec.input_dim}), got {x.shape}")
    if params.layout.total_len != build_layout(spec).total_len:
        raise ShapeError("parameter vector does not match the network spec")
    return x.astype(params.dtype, copy=False)


def _layer_views(spec: NetworkSpec, params: ParamVector):
    """(W, b) views per layer, W shaped (fan_in, fan_out)."""
    out = []
    segs = params.layout.segments
    for layer_id in range(spec.num_layers):
        wseg, bseg = segs[2 * layer_id], segs[2 * layer_id + 1]
        w = params.values[wseg.offset : wseg.offset + wseg.length].reshape(wseg.fan_in, wseg.fan_out)
        b = params.values[bseg.offset : bseg.offset + bseg.length]
        out.append((w, b))
    return out


def _norm_insertion_layer(spec: NetworkSpec, frozen_norm: FrozenNormLayer | None) -> int:
    """Layer index after whose activation the frozen norm applies, or -1."""
    if frozen_norm is None:
        return -1
    block = frozen_norm.insert_after_block
    if not 1 <= block <= spec.num_blocks:
        raise ConfigurationError(f"frozen norm block {block} outside 1..{spec.num_blocks}")
    last = -1
    for layer_id in range(spec.num_layers):
        if spec.block_of_layer(layer_id) == block:
            last = layer_id
    return last


def forward(
    spec: NetworkSpec,
    params: ParamVector,
    inputs: np.ndarray,
    frozen_norm: FrozenNormLayer | None = None,
) -> np.ndarray:
    """Logits for a batch of inputs, (batch, num_classes)."""
    x = _check_forward_args(spec, params, inputs)
    norm_layer = _norm_insertion_layer(spec, frozen_norm)
    h = x
    last = spec.num_layers - 1
    for layer_id, (w, b) in enumerate(_layer_views(spec, params)):
        z = h @ w + b
        h = np.maximum(z, 0) if layer_id != last else z
        if layer_id == norm_layer:
            mean = frozen_norm.mean.astype(h.dtype, copy=False)
            std = frozen_norm.std.astype(h.dtype, copy=False)
            h = (h - mean) / std
    return h


def activations_after_block(
    spec: NetworkSpec,
    params: ParamVector,
    inputs: np.ndarray,
    block: int,
    frozen_norm: FrozenNormLayer | None = None,
) -> np.ndarray:
    """Post-activation output of the last layer of the given block."""
    if not 1 <= block <= spec.num_blocks:
        raise ConfigurationError(f"block {block} outside 1..{spec.num_blocks}")
    x = _check_forward_args(spec, params, inputs)
    norm_layer = _norm_insertion_layer(spec, frozen_norm)
    h = x
    last = spec.num_layers - 1
    stop = max(lid for lid in range(spec.num_layers) if spec.block_of_layer(lid) == block)
    for layer_id, (w, b) in enumerate(_layer_views(spec, params)):
        z = h @ w + b
        h = np.maximum(z, 0) if layer_id != last else z
        if layer_id == norm_layer:
            h = (h - frozen_norm.mean.astype(h.dtype)) / frozen_norm.std.astype(h.dtype)
        if layer_id == stop:
            return h
    raise ConfigurationError(f"block {block} not reached")  # pragma: no cover


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits)
    # shift by the row max so exp never overflows
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits)
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1:
        raise ShapeError(f"labels must be 1-D, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise DataError(f"labels must lie in [0, {num_classes}), got range [{y.min()}, {y.max()}]")
    return y.astype(np.int64, copy=False)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log softmax probability of the true class."""
    z = np.asarray(logits)
    y = _check_labels(labels, z.shape[1])
    if y.shape[0] != z.shape[0]:
        raise ShapeError(f"{z.shape[0]} logit rows vs {y.shape[0]} labels")
    m = z.max(axis=1)
    lse = m + np.log(np.exp(z - m[:, None]).sum(axis=1))
    return float(np.mean(lse - z[np.arange(z.shape[0]), y]))


def _check_teacher(teacher: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    p = np.asarray(teacher)
    if p.shape != shape:
        raise ShapeError(f"teacher rows {p.shape} do not align with logits {shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise DataError("teacher probabilities must be finite and non-negative")
    sums = p.sum(axis=1)
    bad = np.abs(sums - 1.0) > 1e-6
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DataError(f"teacher row {i} sums to {sums[i]!r}, expected 1 within 1e-6")
    return p


def kl_divergence(teacher_probs: np.ndarray, student_logits: np.ndarray) -> float:
    """Mean KL(teacher || softmax(student_logits)); zero-probability teacher terms contribute 0."""
    z = np.asarray(student_logits)
    p = _check_teacher(teacher_probs, z.shape)
    q = softmax(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    kl = float(np.mean(terms.sum(axis=1)))
    return max(kl, 0.0)


def loss_grad_logits(
    spec: NetworkSpec,
    params: ParamVector,
    inputs: np.ndarray,
    labels: np.ndarray,
    teacher: np.ndarray | None = None,
    beta_distill: float = 0.0,
    frozen_norm: FrozenNormLayer | None = None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss, exact parameter gradient, and the logits of the forward pass.

    The loss is cross-entropy plus ``beta_distill`` times the KL term against
    the fixed teacher rows; gradients flow only through the student. With no
    teacher or beta 0 this is the plain cross-entropy gradient.
    """
    if beta_distill < 0:
        raise ConfigurationError(f"beta_distill must be >= 0, got {beta_distill}")
    x = _check_forward_args(spec, params, inputs)
    y = _check_labels(labels, spec.num_classes)
    if y.shape[0] != x.shape[0]:
        raise ShapeError(f"{x.shape[0]} inputs vs {y.shape[0]} labels")
    norm_layer = _norm_insertion_layer(spec, frozen_norm)
    layers = _layer_views(spec, params)
    last = spec.num_layers - 1
    batch = x.shape[0]

    # forward, keeping the input of each layer and the pre-activations
    layer_inputs, preacts = [], []
    h = x
    for layer_id, (w, b) in enumerate(layers):
        layer_inputs.append(h)
        z = h @ w + b
        preacts.append(z)
        h = np.maximum(z, 0) if layer_id != last else z
        if layer_id == norm_layer:
            h = (h - frozen_norm.mean.astype(h.dtype)) / frozen_norm.std.astype(h.dtype)
    logits = h

    loss = softmax_cross_entropy(logits, y)
    probs = softmax(logits)
    dlogits = probs.copy()
    dlogits[np.arange(batch), y] -= 1.0
    dlogits /= batch
    if teacher is not None and beta_distill != 0.0:
        p = _check_teacher(teacher, logits.shape)
        loss = loss + beta_distill * kl_divergence(p, logits)
        dlogits = dlogits + (beta_distill / batch) * (probs - p)

    grad = np.zeros_like(params.values)
    segs = params.layout.segments
    d = dlogits
    for layer_id in range(last, -1, -1):
        if layer_id == norm_layer:
            d = d / frozen_norm.std.astype(d.dtype)
        z = preacts[layer_id]
        dz = d if layer_id == last else d * (z > 0)
        h_in = layer_inputs[layer_id]
        wseg, bseg = segs[2 * layer_id], segs[2 * layer_id + 1]
        grad[wseg.offset : wseg.offset + wseg.length] = (h_in.T @ dz).ravel()
        grad[bseg.offset : bseg.offset + bseg.length] = dz.sum(axis=0)
        if layer_id > 0:
            w, _ = layers[layer_id]
            d = dz @ w.T
    return float(loss), grad, logits


def loss_and_grad(
    spec: NetworkSpec,
    params: ParamVector,
    inputs: np.ndarray,
    labels: np.ndarray,
    teacher: np.ndarray | None = None,
    beta_distill: float = 0.0,
    frozen_norm: FrozenNormLayer | None = None,
) -> tuple[float, np.ndarray]:
    loss, grad, _ = loss_grad_logits(spec, params, inputs, labels, teacher, beta_distill, frozen_norm)
    return loss, grad


def weight_norm(params: ParamVector) -> float:
    """Euclidean norm of the full parameter vector, accumulated in float64."""
    return float(np.linalg.norm(params.values.astype(np.float64)))


def block_norms(params: ParamVector) -> np.ndarray:
    """Euclidean norm of each block's parameters, float64, index b-1 for block b."""
    layout = params.layout
    v = params.values.astype(np.float64)
    return np.array([np.linalg.norm(v[layout.block_param_indices(b)]) for b in range(1, layout.num_blocks + 1)])
