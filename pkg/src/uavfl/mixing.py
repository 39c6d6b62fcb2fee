"""Neighbor-mixing aggregation: stochastic mixing matrices and the
alternating local-update / inter-node-communication schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from uavfl import kernels
from uavfl.data import DatasetPartition
from uavfl.energy import ChannelConfig, EnergyLedger, comm_energy, debit_battery, min_transmit_time
from uavfl.errors import MixingMatrixError, TrainingDivergedError
from uavfl.fleet import Fleet, distance
from uavfl.model import ModelParams

_ROW_SUM_TOL = 1e-9


class MixingMatrix:
    """Row-stochastic N x N matrix with an optional declared neighbor graph.

    Entry [j][i] is the weight node i gives node j's parameters during one
    communication step (column action: new_i = sum_j C[j][i] * w_j).
    """

    def __init__(self, matrix, neighbors: Sequence[Sequence[int]] | None = None):
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise MixingMatrixError(f"matrix must be square, got {m.shape}")
        if np.any(m < 0):
            raise MixingMatrixError("matrix entries must be >= 0")
        if np.any(np.abs(m.sum(axis=1) - 1.0) > _ROW_SUM_TOL):
            raise MixingMatrixError("matrix rows must sum to 1")
        if neighbors is not None:
            allowed = np.eye(m.shape[0], dtype=bool)
            for i, ns in enumerate(neighbors):
                for j in ns:
                    allowed[i, j] = True
            if np.any((m > 0) & ~allowed):
                raise MixingMatrixError(
                    "positive weight between nodes that are not neighbors"
                )
        self.matrix = m
        self.neighbors = (
            [frozenset(ns) for ns in neighbors] if neighbors is not None else None
        )

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_doubly_stochastic(self) -> bool:
        return bool(np.all(np.abs(self.matrix.sum(axis=0) - 1.0) <= _ROW_SUM_TOL))

    @classmethod
    def metropolis(cls, neighbors: Sequence[Sequence[int]]) -> "MixingMatrix":
        """Metropolis-Hastings weights over an undirected neighbor graph.

        Doubly stochastic by construction, so mixing preserves the fleet's
        parameter mean.
        """
        n = len(neighbors)
        sets = [set(ns) for ns in neighbors]
        for i, ns in enumerate(sets):
            if i in ns:
                raise MixingMatrixError(f"node {i} lists itself as a neighbor")
            for j in ns:
                if i not in sets[j]:
                    raise MixingMatrixError(f"neighbor graph not symmetric: {i}-{j}")
        deg = [len(ns) for ns in sets]
        m = np.zeros((n, n))
        for i, ns in enumerate(sets):
            for j in ns:
                m[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
            m[i, i] = 1.0 - m[i].sum()
        return cls(m, neighbors)


def mixing_step(X: Sequence[ModelParams], C: MixingMatrix) -> list[ModelParams]:
    """One inter-node communication step: node i receives sum_j C[j][i] w_j."""
    if len(X) != C.n:
        raise MixingMatrixError(f"{len(X)} parameter sets for a {C.n}-node matrix")
    layout = X[0].layout
    for w in X:
        if w.layout != layout:
            raise MixingMatrixError("mixing requires identical layouts")
    stacked = np.stack([w.values for w in X])
    mixed = C.matrix.T @ stacked
    return [
        ModelParams(mixed[i], layout, X[i].bytes_per_value) for i in range(C.n)
    ]


@dataclass(frozen=True)
class DflPlan:
    """Alternating schedule: tau1 gradient steps then tau2 mixing steps,
    for `rounds` rounds, then pure local steps up to `total_steps`."""

    tau1: int
    tau2: int
    rounds: int
    total_steps: int
    eta: float
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.tau1 < 1 or self.tau2 < 0 or self.rounds < 1:
            raise ValueError("need tau1 >= 1, tau2 >= 0, rounds >= 1")
        if self.total_steps < self.rounds * (self.tau1 + self.tau2):
            raise ValueError("total_steps must cover all scheduled rounds")


@dataclass
class DflNodeMetrics:
    round: int
    node_id: int
    accuracy: float
    loss: float
    bytes_sent: int
    bytes_received: int


class _BatchStream:
    """Seeded stream of minibatch index arrays, reshuffled each pass."""

    def __init__(self, n: int, batch_size: int, seed):
        self.rng = np.random.default_rng(seed)
        self.n = n
        self.batch_size = batch_size
        self.order = self.rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos >= self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        batch = self.order[self.pos : self.pos + self.batch_size]
        self.pos += len(batch)
        return batch


def run_dfl_schedule(
    fleet: Fleet,
    plan: DflPlan,
    C: MixingMatrix,
    partitions: Sequence[DatasetPartition],
    *,
    eval_data: DatasetPartition | None = None,
    channel: ChannelConfig | None = None,
    ledger: EnergyLedger | None = None,
    backend=None,
) -> tuple[list[ModelParams], list[DflNodeMetrics]]:
    """Run the alternating local-update / mixing schedule over the fleet.

    Node i starts from fleet.drones[i].params and trains on partitions[i];
    one local-update step consumes one minibatch. Every mixing step meters
    one message per positive off-diagonal matrix entry (and debits the
    sender's battery when a channel config is supplied).
    """
    n = fleet.n
    if C.n != n or len(partitions) != n:
        raise MixingMatrixError("fleet, matrix and partitions disagree in size")
    be = backend or kernels.active
    params = [fleet.drones[i].params.copy() for i in range(n)]
    layout = params[0].layout
    # all streams share the plan seed: nodes with identical data then take
    # identical gradient steps, so mixing is a no-op by symmetry
    streams = [
        _BatchStream(partitions[i].size, plan.batch_size, plan.seed)
        for i in range(n)
    ]
    sent = [0] * n
    received = [0] * n
    metrics: list[DflNodeMetrics] = []

    def local_step(step: int) -> None:
        for i in range(n):
            batch = streams[i].next()
            _, grad = be.loss_grad(
                params[i].values, partitions[i].X[batch], partitions[i].y[batch],
                layout.dims,
            )
            values = params[i].values - plan.eta * grad
            if not np.isfinite(values).all():
                raise TrainingDivergedError(
                    f"node {i}: non-finite parameters at step {step}",
                    drone_id=i, epoch=step,
                )
            params[i] = ModelParams(values, layout, params[i].bytes_per_value)

    def mix(round_no: int) -> None:
        nonlocal params
        for j in range(n):
            for i in range(n):
                if i != j and C.matrix[j, i] > 0:
                    size = params[j].serialized_size
                    sent[j] += size
                    received[i] += size
                    if channel is not None:
                        d = distance(fleet.drones[j].position, fleet.drones[i].position)
                        t = min_transmit_time(size * 8, d, channel)
                        joules = comm_energy(t, channel)
                        debit_battery(fleet.drones[j], joules)
                        if ledger is not None:
                            ledger.add_transmit(j, joules, t, size, i, round_no)
        params = mixing_step(params, C)

    def snapshot(round_no: int) -> None:
        for i in range(n):
            data = eval_data if eval_data is not None and eval_data.size else partitions[i]
            acc, loss = be.predict_eval(params[i].values, data.X, data.y, layout.dims)
            metrics.append(
                DflNodeMetrics(round_no, i, acc, loss, sent[i], received[i])
            )
            sent[i] = 0
            received[i] = 0

    tau = plan.tau1 + plan.tau2
    step = 0
    for k in range(1, plan.rounds + 1):
        for _ in range(plan.tau1):
            step += 1
            local_step(step)
        for _ in range(plan.tau2):
            step += 1
            mix(k)
        snapshot(k)
    while step < plan.total_steps:
        step += 1
        local_step(step)
    if step > plan.rounds * tau:
        snapshot(plan.rounds + 1)
    return params, metrics
