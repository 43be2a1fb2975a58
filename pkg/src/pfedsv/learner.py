"""Flat-parameter learners: linear softmax and one-hidden-layer ReLU MLP.

All heavy math lives in the kernel backend (compiled when available, numpy
otherwise); this module owns parameter layout, validation, and the vector
algebra used by aggregation.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from pfedsv.backend import kernels
from pfedsv.errors import (
    ArchMismatch,
    DimensionMismatch,
    EmptyCoalition,
    NonFiniteLoss,
    WeightsNotNormalized,
)

WEIGHT_SUM_TOL = 1e-9

_HEADER = struct.Struct("<III")  # input_dim, hidden_dim (0 = linear), num_classes


@dataclass(frozen=True)
class ArchitectureSpec:
    """Shared model shape; every client in a federation uses the same one."""

    input_dim: int
    hidden_dim: int | None
    num_classes: int

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1 when present")

    @property
    def kernel_hidden(self) -> int:
        return self.hidden_dim or 0

    @property
    def param_count(self) -> int:
        d, h, c = self.input_dim, self.hidden_dim, self.num_classes
        if h is None:
            return d * c + c
        return d * h + h + h * c + c


@dataclass(frozen=True)
class ParamVector:
    """Immutable flat float64 parameter vector tied to an architecture."""

    values: np.ndarray
    arch: ArchitectureSpec

    def __post_init__(self):
        # private copy, so freezing it never affects a caller-owned array
        values = np.array(self.values, dtype=np.float64, order="C")
        if values.ndim != 1 or len(values) != self.arch.param_count:
            raise DimensionMismatch(
                f"expected {self.arch.param_count} parameters, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise NonFiniteLoss("parameter vector contains NaN or Inf")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class LabeledBatch:
    """Feature matrix plus integer class labels."""

    features: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or labels.ndim != 1 or features.shape[0] != labels.shape[0]:
            raise DimensionMismatch(
                f"features {features.shape} and labels {labels.shape} do not align"
            )
        if len(labels) and labels.min() < 0:
            raise DimensionMismatch("labels must be non-negative class indices")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.features.shape[0]


def _as_rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _check_batch(arch: ArchitectureSpec, data: LabeledBatch):
    if data.features.shape[1] != arch.input_dim:
        raise DimensionMismatch(
            f"batch has {data.features.shape[1]} features, architecture wants {arch.input_dim}"
        )
    if len(data) and data.labels.max() >= arch.num_classes:
        raise DimensionMismatch("label index out of range for architecture")


def init_params(arch: ArchitectureSpec, rng) -> ParamVector:
    """Uniform [-s, s] weights with s = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = _as_rng(rng)
    d, h, c = arch.input_dim, arch.hidden_dim, arch.num_classes
    parts = []
    if h is None:
        s = math.sqrt(6.0 / (d + c))
        parts += [rng.uniform(-s, s, d * c), np.zeros(c)]
    else:
        s1 = math.sqrt(6.0 / (d + h))
        s2 = math.sqrt(6.0 / (h + c))
        parts += [
            rng.uniform(-s1, s1, d * h),
            np.zeros(h),
            rng.uniform(-s2, s2, h * c),
            np.zeros(c),
        ]
    return ParamVector(np.concatenate(parts), arch)


def local_train(
    params: ParamVector,
    data: LabeledBatch,
    epochs: int,
    lr: float,
    batch_size: int,
    rng,
) -> ParamVector:
    """Minibatch SGD on mean cross-entropy; input params are left untouched."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if lr <= 0:
        raise ValueError("learning rate must be > 0")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(data) == 0:
        raise ValueError("training data must be nonempty")
    _check_batch(params.arch, data)
    rng = _as_rng(rng)
    arch = params.arch
    theta = params.values.copy()
    for _ in range(epochs):
        order = rng.permutation(len(data))
        loss = kernels.sgd_epoch(
            theta,
            data.features,
            data.labels,
            order,
            lr,
            batch_size,
            arch.input_dim,
            arch.kernel_hidden,
            arch.num_classes,
        )
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"epoch loss became {loss}; lower the learning rate")
    if not np.all(np.isfinite(theta)):
        raise NonFiniteLoss("parameters diverged during training")
    return ParamVector(theta, arch)


def evaluate(params: ParamVector, data: LabeledBatch) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) on a batch; argmax ties go to the lowest class."""
    if len(data) == 0:
        raise ValueError("evaluation data must be nonempty")
    _check_batch(params.arch, data)
    arch = params.arch
    return kernels.eval_metrics(
        params.values,
        data.features,
        data.labels,
        arch.input_dim,
        arch.kernel_hidden,
        arch.num_classes,
    )


def loss_gradient(params: ParamVector, data: LabeledBatch) -> tuple[float, np.ndarray]:
    """Full-batch mean cross-entropy and its gradient; used for gradient checks."""
    if len(data) == 0:
        raise ValueError("data must be nonempty")
    _check_batch(params.arch, data)
    arch = params.arch
    return kernels.loss_and_grad(
        params.values,
        data.features,
        data.labels,
        arch.input_dim,
        arch.kernel_hidden,
        arch.num_classes,
    )


def _weighted_sum(pairs, arch: ArchitectureSpec) -> ParamVector:
    # Canonical content-based ordering makes the accumulation independent of
    # the order members were passed in, down to the last bit.
    live = [(v, w) for v, w in pairs if w != 0.0]
    if len(live) == 1 and live[0][1] == 1.0:
        return ParamVector(live[0][0], arch)
    live.sort(key=lambda vw: (vw[0].tobytes(), np.float64(vw[1]).tobytes()))
    acc = np.zeros(arch.param_count)
    for values, weight in live:
        acc += weight * values
    return ParamVector(acc, arch)


def _common_arch(members) -> ArchitectureSpec:
    arch = members[0].arch
    for m in members[1:]:
        if m.arch != arch:
            raise ArchMismatch(f"cannot combine {m.arch} with {arch}")
    return arch


def average_params(members: list[ParamVector]) -> ParamVector:
    """Elementwise arithmetic mean of the member vectors."""
    if not members:
        raise EmptyCoalition("cannot average zero parameter vectors")
    arch = _common_arch(members)
    w = 1.0 / len(members)
    return _weighted_sum(((m.values, w) for m in members), arch)


def weighted_aggregate(members: list[tuple[ParamVector, float]]) -> ParamVector:
    """Elementwise weighted sum; weights must be a point on the simplex."""
    if not members:
        raise EmptyCoalition("cannot aggregate zero parameter vectors")
    weights = np.array([w for _, w in members], dtype=np.float64)
    if np.any(weights < 0):
        raise WeightsNotNormalized("aggregation weights must be >= 0")
    if abs(weights.sum() - 1.0) >= WEIGHT_SUM_TOL:
        raise WeightsNotNormalized(f"weights sum to {weights.sum()!r}, expected 1")
    arch = _common_arch([m for m, _ in members])
    return _weighted_sum(((m.values, float(w)) for m, w in members), arch)


def param_distance(a: ParamVector, b: ParamVector, squared: bool = False) -> float:
    """Euclidean distance between two parameter vectors (optionally squared)."""
    if a.arch != b.arch:
        raise ArchMismatch(f"cannot compare {a.arch} with {b.arch}")
    diff = a.values - b.values
    # np.sum, not BLAS dot: reduction order must not depend on thread count
    d2 = float(np.sum(diff * diff))
    return d2 if squared else math.sqrt(d2)


def add_gaussian_noise(params: ParamVector, sigma: float, rng) -> ParamVector:
    """Add i.i.d. N(0, sigma^2) per coordinate; sigma = 0 returns the input."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return params
    rng = _as_rng(rng)
    return ParamVector(params.values + rng.normal(0.0, sigma, len(params.values)), params.arch)


def params_to_bytes(params: ParamVector) -> bytes:
    arch = params.arch
    header = _HEADER.pack(arch.input_dim, arch.kernel_hidden, arch.num_classes)
    return header + params.values.astype("<f8").tobytes()


def params_from_bytes(blob: bytes) -> ParamVector:
    if len(blob) < _HEADER.size:
        raise DimensionMismatch("parameter blob shorter than its header")
    d, h, c = _HEADER.unpack_from(blob)
    arch = ArchitectureSpec(d, h or None, c)
    body = blob[_HEADER.size :]
    if len(body) != arch.param_count * 8:
        raise DimensionMismatch(
            f"expected {arch.param_count} float64 values, got {len(body)} bytes"
        )
    return ParamVector(np.frombuffer(body, dtype="<f8").astype(np.float64), arch)


def save_params(params: ParamVector, path):
    with open(path, "wb") as fh:
        fh.write(params_to_bytes(params))


def load_params(path) -> ParamVector:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read())
