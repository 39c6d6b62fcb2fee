"""Synthetic dataset generation and per-drone partitioning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DatasetPartition:
    """A labelled example set; `source_rows` traces rows back to the source."""

    X: np.ndarray  # (n, d) float64
    y: np.ndarray  # (n,)   int64
    source_rows: np.ndarray | None = None

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("features and labels disagree in shape")

    @property
    def size(self) -> int:
        return self.X.shape[0]

    def take(self, rows: np.ndarray) -> "DatasetPartition":
        src = self.source_rows[rows] if self.source_rows is not None else rows
        return DatasetPartition(self.X[rows], self.y[rows], np.asarray(src))


def make_blobs(n_examples: int, n_features: int, n_classes: int,
               cluster_std: float, seed, center_spread: float = 4.0
               ) -> DatasetPartition:
    """Deterministic Gaussian-blob classification data.

    Class centers are drawn uniformly in [-center_spread, center_spread]^d,
    labels are balanced, and the example order is shuffled so that any
    contiguous slice is class-mixed.
    """
    if n_examples < 1:
        raise ValueError("n_examples must be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-center_spread, center_spread, (n_classes, n_features))
    y = np.arange(n_examples, dtype=np.int64) % n_classes
    X = centers[y] + rng.normal(0.0, cluster_std, (n_examples, n_features))
    perm = rng.permutation(n_examples)
    return DatasetPartition(X[perm], y[perm], np.arange(n_examples))


def split_holdout(source: DatasetPartition, eval_fraction: float, seed
                  ) -> tuple[DatasetPartition, DatasetPartition]:
    """Carve a held-out evaluation split; the rest is the assignable pool.

    The holdout is never handed to a drone: it scores the per-round metrics
    and the inter-cluster exchange candidates.
    """
    if not 0 <= eval_fraction < 1:
        raise ValueError("eval_fraction must be in [0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(source.size)
    n_eval = int(round(eval_fraction * source.size))
    return source.take(perm[n_eval:]), source.take(perm[:n_eval])


def partition_dataset(source: DatasetPartition, n_drones: int, per_drone: int,
                      overlap: float, seed) -> list[DatasetPartition]:
    """Assign each drone exactly `per_drone` examples from the source.

    A shared core of round(overlap * per_drone) examples appears in every
    partition, so the pairwise overlap ratio equals `overlap` by
    construction. The remainder is sampled without replacement while the
    source allows, then with replacement.
    """
    if source.size < 1:
        raise ValueError("source dataset is empty")
    if n_drones < 1 or per_drone < 1:
        raise ValueError("n_drones and per_drone must be >= 1")
    if not 0 <= overlap <= 1:
        raise ValueError("overlap must be in [0, 1]")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(source.size)
    core_size = int(round(overlap * per_drone))
    core = perm[:core_size]
    cursor = core_size

    parts = []
    for _ in range(n_drones):
        need = per_drone - core_size
        fresh = perm[cursor : cursor + need]
        cursor += len(fresh)
        if len(fresh) < need:  # source exhausted: fall back to replacement
            extra = rng.integers(0, source.size, need - len(fresh))
            fresh = np.concatenate([fresh, extra])
        parts.append(source.take(np.concatenate([core, fresh]).astype(np.intp)))
    return parts
