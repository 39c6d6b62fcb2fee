"""Desk-scale differentiable model and the FedAvg primitives.

The model family is a multinomial logistic regression, optionally with one
tanh hidden layer (kept well under 10^4 parameters), trained with mean
cross-entropy. Parameters live in a single flat float64 vector so that
averaging, mixing and serialization never need to know the architecture.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from uavfl import kernels
from uavfl.data import DatasetPartition
from uavfl.errors import AggregationError, TrainingDivergedError

_MAGIC = b"UFLP"
_HEADER = struct.Struct("<4s8sI")  # magic, layout hash, value count


@dataclass(frozen=True)
class ModelLayout:
    """Architecture descriptor fixing the flat parameter dimension."""

    n_features: int
    n_classes: int
    hidden_units: int = 0

    def __post_init__(self):
        if self.n_features < 1 or self.n_classes < 2 or self.hidden_units < 0:
            raise ValueError(f"invalid model layout {self}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.n_features, self.hidden_units, self.n_classes)

    @property
    def dim(self) -> int:
        d, h, c = self.dims
        if h == 0:
            return d * c + c
        return d * h + h + h * c + c


@dataclass
class ModelParams:
    """Flat parameter vector; the unit exchanged in every FL message."""

    values: np.ndarray
    layout: ModelLayout
    bytes_per_value: int = 4

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.shape[0] != self.layout.dim:
            raise ValueError(
                f"parameter vector has length {self.values.shape}, "
                f"layout requires {self.layout.dim}"
            )
        if self.bytes_per_value not in (4, 8):
            raise ValueError("bytes_per_value must be 4 or 8")

    @property
    def serialized_size(self) -> int:
        """Byte length of serialize(); the message size s in the comm model."""
        return _HEADER.size + self.layout.dim * self.bytes_per_value

    def copy(self) -> "ModelParams":
        return ModelParams(self.values.copy(), self.layout, self.bytes_per_value)

    def layout_hash(self) -> bytes:
        key = f"{self.layout.dims},{self.bytes_per_value}".encode()
        return hashlib.sha256(key).digest()[:8]

    def serialize(self) -> bytes:
        """16-byte header (magic, layout hash, count) + little-endian values."""
        dtype = "<f4" if self.bytes_per_value == 4 else "<f8"
        header = _HEADER.pack(_MAGIC, self.layout_hash(), self.layout.dim)
        return header + self.values.astype(dtype).tobytes()


def deserialize_params(blob: bytes, layout: ModelLayout,
                       bytes_per_value: int = 4) -> ModelParams:
    magic, lhash, count = _HEADER.unpack_from(blob)
    expect = ModelParams(np.zeros(layout.dim), layout, bytes_per_value)
    if magic != _MAGIC:
        raise ValueError("bad magic in serialized parameters")
    if lhash != expect.layout_hash() or count != layout.dim:
        raise ValueError("serialized parameters do not match the given layout")
    dtype = "<f4" if bytes_per_value == 4 else "<f8"
    values = np.frombuffer(blob, dtype=dtype, offset=_HEADER.size, count=count)
    return ModelParams(values.astype(np.float64), layout, bytes_per_value)


@dataclass(frozen=True)
class HyperParams:
    """Local-training knobs: step size, minibatch size, epochs, participation."""

    eta: float
    batch_size: int
    local_epochs: int
    client_fraction: float = 1.0

    def __post_init__(self):
        # eta == 0 is tolerated (degenerate no-op step, useful in tests);
        # the config loader enforces eta > 0 for real runs.
        if self.eta < 0 or self.batch_size < 1 or self.local_epochs < 1:
            raise ValueError(f"invalid hyperparameters {self}")
        if not 0 < self.client_fraction <= 1:
            raise ValueError("client_fraction must be in (0, 1]")


def init_params(layout: ModelLayout, seed: int, scale: float = 0.01,
                bytes_per_value: int = 4) -> ModelParams:
    """Small seeded Gaussian init (identical for every drone at round 0)."""
    rng = np.random.default_rng(seed)
    values = rng.normal(0.0, scale, layout.dim)
    return ModelParams(values, layout, bytes_per_value)


def _shuffle_order(n: int, epochs: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.stack([rng.permutation(n) for _ in range(epochs)]).astype(np.int64)


def client_update(k: int, w: ModelParams, part: DatasetPartition,
                  hp: HyperParams, seed, backend=None) -> ModelParams:
    """Local minibatch gradient descent on drone k's partition.

    Runs `local_epochs` passes, reshuffling with the given seed each pass;
    the input parameters are not mutated. Raises TrainingDivergedError the
    first epoch the parameter vector goes non-finite.
    """
    if part.size < 1:
        raise ValueError(f"drone {k}: empty partition")
    be = backend or kernels.active
    order = _shuffle_order(part.size, hp.local_epochs, seed)
    values, bad_epoch = be.sgd_run(
        w.values, part.X, part.y, w.layout.dims, hp.eta, order, hp.batch_size
    )
    if bad_epoch >= 0:
        raise TrainingDivergedError(
            f"drone {k}: non-finite parameters after local epoch {bad_epoch}",
            drone_id=k, epoch=int(bad_epoch),
        )
    return ModelParams(values, w.layout, w.bytes_per_value)


def fedavg_aggregate(
    contributions: Sequence[tuple[ModelParams, int]]
) -> ModelParams:
    """Sample-count weighted average of parameter vectors.

    Every contribution is weighted n_k / sum(n_k); commutative in input
    order up to float64 round-off.
    """
    if not contributions:
        raise AggregationError("no contributions to aggregate")
    first, _ = contributions[0]
    for w, n_k in contributions:
        if w.layout != first.layout:
            raise AggregationError(
                f"layout mismatch: {w.layout} vs {first.layout}"
            )
        if n_k < 1:
            raise AggregationError("every contribution needs n_k >= 1")
    counts = np.array([n_k for _, n_k in contributions], dtype=np.float64)
    weights = counts / counts.sum()
    stacked = np.stack([w.values for w, _ in contributions])
    return ModelParams(weights @ stacked, first.layout, first.bytes_per_value)


def evaluate(w: ModelParams, data: DatasetPartition,
             backend=None) -> tuple[float, float]:
    """(accuracy, mean cross-entropy loss) of w on the given examples."""
    if data.size < 1:
        raise ValueError("cannot evaluate on an empty dataset")
    be = backend or kernels.active
    return be.predict_eval(w.values, data.X, data.y, w.layout.dims)
