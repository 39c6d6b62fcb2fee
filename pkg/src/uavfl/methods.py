"""The four training methods over a clustered fleet.

  C   - blocks of lr intra-cluster FedAvg rounds, then gr evaluated
        inter-cluster exchanges; blocks repeat until the global-epoch
        budget is filled.
  A   - strict alternation of one intra-cluster round and one exchange.
  One - a single cluster; classic FedAvg with the head as server.
  O   - no communication; every drone trains alone.

Every epoch consumes one unit of the shared global-epoch budget (a block
of method C costs lr + gr), so all methods compare under an equal number
of communication opportunities. Scheduling is single-threaded and fully
deterministic: per-drone randomness derives from stable hashes of
(plan seed, component, drone id, epoch).

Liveness is evaluated at round boundaries: a drone whose battery floors
to zero mid-round completes that round's remaining actions and is
excluded (but still reported, with battery 0) from every later round.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from uavfl.data import DatasetPartition
from uavfl.energy import (
    ChannelConfig,
    ComputePowerConfig,
    EnergyLedger,
    comm_energy,
    compute_energy,
    debit_battery,
    min_transmit_time,
)
from uavfl.errors import PlanError, TrainingDivergedError
from uavfl.fleet import DroneState, Fleet, distance
from uavfl.metrics import RoundLog, RoundRecord, record_round
from uavfl.model import (
    HyperParams,
    ModelParams,
    client_update,
    evaluate,
    fedavg_aggregate,
)

METHODS = ("C", "A", "One", "O")
EXCHANGE_WEIGHTINGS = ("samples", "server")


def stable_seed(*parts) -> int:
    """Deterministic 64-bit seed from a tuple of hashable labels."""
    key = "|".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


@dataclass(frozen=True)
class TrainingPlan:
    """Method selector plus every schedule knob and the run seed."""

    method: str
    le: int = 3
    ge: int = 30
    lr: int = 5
    gr: int = 5
    eta: float = 0.05
    batch_size: int = 32
    seed: int = 0
    client_fraction: float = 1.0
    exchange_weighting: str = "samples"

    def validate(self) -> None:
        if self.method not in METHODS:
            raise PlanError(f"unknown method {self.method!r}, expected {METHODS}")
        if self.le < 1 or self.ge < 1:
            raise PlanError("le and ge must be >= 1")
        if self.method == "C" and (self.lr < 1 or self.gr < 1):
            raise PlanError("method C requires lr >= 1 and gr >= 1")
        if self.eta < 0:
            raise PlanError("eta must be >= 0")
        if self.batch_size < 1:
            raise PlanError("batch_size must be >= 1")
        if not 0 < self.client_fraction <= 1:
            raise PlanError("client_fraction must be in (0, 1]")
        if self.exchange_weighting not in EXCHANGE_WEIGHTINGS:
            raise PlanError(
                f"exchange_weighting must be one of {EXCHANGE_WEIGHTINGS}"
            )

    def hyper(self) -> HyperParams:
        return HyperParams(self.eta, self.batch_size, self.le, self.client_fraction)

    def type_label(self, fleet_size: int) -> str:
        if self.method == "C":
            return f"C_{self.lr}lr_{self.gr}gr_{fleet_size}"
        return f"{self.method}_{fleet_size}"


@dataclass(frozen=True)
class ExchangeOutcome:
    """Result of one evaluated inter-cluster exchange.

    `acc_b_to_a` scores the aggregate formed at cluster A's head (B acted
    as the client), `acc_a_to_b` the reverse; `winner` is the server-side
    cluster of the better direction (ties go to the lower cluster id).
    """

    winner: int
    acc_a_to_b: float
    acc_b_to_a: float
    broadcast_params: ModelParams


@dataclass
class SimEnv:
    """Everything a scheduler needs besides the fleet and the plan."""

    partitions: Sequence[DatasetPartition]  # indexed by drone partition_id
    eval_data: DatasetPartition | None
    init: ModelParams
    channel: ChannelConfig
    compute: ComputePowerConfig
    message_bytes: int | None = None  # override s (e.g. ResNet-scale studies)
    run_id: str | None = None
    log_path: str | None = None  # mirror records to this CSV as they arrive
    backend: object = None
    client_seed_fn: Callable[[int, int], int] | None = None


@dataclass
class RunResult:
    status: str  # "completed" | "partial"
    records: list[RoundRecord]
    ledger: EnergyLedger
    params: dict[int, ModelParams]
    exchanges: list[ExchangeOutcome]
    type_label: str
    run_id: str


class _PartialRun(Exception):
    """Internal: a cluster ran out of live drones; stop with partial status."""


class Scheduler:
    """Drives one run; unit tests may call intra_round/exchange directly."""

    def __init__(self, fleet: Fleet, plan: TrainingPlan, env: SimEnv):
        plan.validate()
        self.fleet = fleet
        self.plan = plan
        self.env = env
        self.hp = plan.hyper()
        self.type_label = plan.type_label(fleet.n)
        self.run_id = env.run_id or f"{self.type_label}_{plan.seed}"
        self.params: dict[int, ModelParams] = {
            d.id: env.init.copy() for d in fleet.drones
        }
        for d in fleet.drones:
            if d.partition_id is None:
                d.partition_id = d.id
        self.message_size = (
            env.message_bytes
            if env.message_bytes is not None
            else env.init.serialized_size
        )
        self.ledger = EnergyLedger()
        self.log = RoundLog(env.log_path)
        self.exchanges: list[ExchangeOutcome] = []
        self.epoch = 0
        self._sent = {d.id: 0 for d in fleet.drones}
        self._received = {d.id: 0 for d in fleet.drones}

    # -- primitive actions -------------------------------------------------

    def _partition(self, drone: DroneState) -> DatasetPartition:
        return self.env.partitions[drone.partition_id]

    def _client_seed(self, drone_id: int) -> int:
        if self.env.client_seed_fn is not None:
            return self.env.client_seed_fn(drone_id, self.epoch)
        return stable_seed(self.plan.seed, "client", drone_id, self.epoch)

    def _train(self, drone: DroneState) -> None:
        part = self._partition(drone)
        try:
            self.params[drone.id] = client_update(
                drone.id, self.params[drone.id], part, self.hp,
                self._client_seed(drone.id), backend=self.env.backend,
            )
        except TrainingDivergedError as exc:
            exc.global_epoch = self.epoch
            raise
        t_tr = self.env.compute.training_time_s(part.size, self.hp.local_epochs)
        energy_wh, _ = compute_energy(self.env.compute, t_tr)
        joules = energy_wh * 3600.0
        debit_battery(drone, joules)
        self.ledger.add_compute(drone.id, joules, t_tr, round=self.epoch)

    def _transfer(self, src: DroneState, dst: DroneState) -> None:
        """One parameter message src -> dst: bytes both sides, energy at src."""
        size = self.message_size
        d = max(
            distance(src.position, dst.position), self.env.channel.ref_distance_m
        )
        t = min_transmit_time(size * 8, d, self.env.channel)
        joules = comm_energy(t, self.env.channel)
        debit_battery(src, joules)
        self.ledger.add_transmit(src.id, joules, t, size, dst.id, round=self.epoch)
        self._sent[src.id] += size
        self._received[dst.id] += size

    def _alive_members(self, cluster_id: int) -> list[DroneState]:
        return [
            d for d in sorted(self.fleet.members(cluster_id), key=lambda d: d.id)
            if d.alive
        ]

    def _head(self, cluster_id: int) -> DroneState:
        """Current head; a depleted head is replaced by the live drone
        nearest the cluster's mean position (ties to the lowest id)."""
        head = self.fleet.head(cluster_id)
        if head.alive:
            return head
        alive = self._alive_members(cluster_id)
        if not alive:
            raise _PartialRun
        center = np.mean([d.position.as_array() for d in alive], axis=0)
        new_head = min(
            alive,
            key=lambda d: (float(np.linalg.norm(d.position.as_array() - center)), d.id),
        )
        head.is_head = False
        new_head.is_head = True
        return new_head

    def _sample(self, alive: list[DroneState], cluster_id: int) -> list[DroneState]:
        if self.plan.client_fraction >= 1.0 or len(alive) <= 1:
            return alive
        m = max(int(self.plan.client_fraction * len(alive)), 1)
        rng = np.random.default_rng(
            stable_seed(self.plan.seed, "sample", cluster_id, self.epoch)
        )
        picked = rng.choice(len(alive), size=m, replace=False)
        return [alive[i] for i in sorted(picked)]

    # -- rounds ------------------------------------------------------------

    def intra_round(self, cluster_id: int) -> None:
        """One FedAvg round inside a cluster: train, upload, average,
        broadcast. All live members end holding the identical aggregate."""
        alive = self._alive_members(cluster_id)
        if not alive:
            raise _PartialRun
        head = self._head(cluster_id)
        sampled = self._sample(alive, cluster_id)
        contribs = []
        for d in sampled:
            self._train(d)
            contribs.append((self.params[d.id], self._partition(d).size))
        for d in sampled:
            if d is not head:
                self._transfer(d, head)
        aggregate = fedavg_aggregate(contribs)
        for d in alive:
            if d is not head:
                self._transfer(head, d)
            self.params[d.id] = aggregate.copy()

    def exchange(self, refresh_heads: bool = False) -> ExchangeOutcome:
        """Evaluated inter-cluster exchange followed by a fleet broadcast.

        Heads swap aggregates, both candidate direction-aggregates are
        scored on the shared held-out split, and the winner is broadcast
        to every live drone of both clusters.
        """
        if self.env.eval_data is None or self.env.eval_data.size == 0:
            raise PlanError("inter-cluster exchange requires a held-out eval split")
        cids = self.fleet.cluster_ids()
        if len(cids) != 2:
            raise PlanError(f"exchange requires exactly 2 clusters, have {cids}")
        cid_a, cid_b = cids
        alive_a = self._alive_members(cid_a)
        alive_b = self._alive_members(cid_b)
        if not alive_a or not alive_b:
            raise _PartialRun
        head_a = self._head(cid_a)
        head_b = self._head(cid_b)
        if refresh_heads:
            self._train(head_a)
            self._train(head_b)
        self._transfer(head_a, head_b)
        self._transfer(head_b, head_a)

        n_a = sum(self._partition(d).size for d in alive_a)
        n_b = sum(self._partition(d).size for d in alive_b)
        w_a, w_b = self.params[head_a.id], self.params[head_b.id]
        if self.plan.exchange_weighting == "samples":
            cand_a = fedavg_aggregate([(w_a, n_a), (w_b, n_b)])
            cand_b = fedavg_aggregate([(w_b, n_b), (w_a, n_a)])
        else:
            # "server" weighting: the visiting head joins as one client,
            # carrying only its own partition; the directions then differ.
            cand_a = fedavg_aggregate(
                [(w_a, n_a), (w_b, self._partition(head_b).size)]
            )
            cand_b = fedavg_aggregate(
                [(w_b, n_b), (w_a, self._partition(head_a).size)]
            )
        acc_at_a, _ = evaluate(cand_a, self.env.eval_data, backend=self.env.backend)
        acc_at_b, _ = evaluate(cand_b, self.env.eval_data, backend=self.env.backend)
        if acc_at_a > acc_at_b:
            winner, broadcast = cid_a, cand_a
        elif acc_at_b > acc_at_a:
            winner, broadcast = cid_b, cand_b
        else:
            winner = min(cid_a, cid_b)
            broadcast = cand_a if winner == cid_a else cand_b
        outcome = ExchangeOutcome(
            winner=winner, acc_a_to_b=acc_at_b, acc_b_to_a=acc_at_a,
            broadcast_params=broadcast,
        )
        for head, alive in ((head_a, alive_a), (head_b, alive_b)):
            for d in alive:
                if d is not head:
                    self._transfer(head, d)
                self.params[d.id] = broadcast.copy()
        self.exchanges.append(outcome)
        return outcome

    def local_round(self) -> None:
        """Method O: every live drone trains alone; nothing is exchanged."""
        alive = [d for d in self.fleet.drones if d.alive]
        if not alive:
            raise _PartialRun
        for d in alive:
            self._train(d)

    # -- epoch bookkeeping ---------------------------------------------------

    def _emit(self, phase: str) -> None:
        for d in self.fleet.drones:
            data = self.env.eval_data
            if data is None or data.size == 0:
                data = self._partition(d)
            acc, loss = evaluate(self.params[d.id], data, backend=self.env.backend)
            record_round(self.log, RoundRecord(
                run_id=self.run_id,
                global_epoch=self.epoch,
                drone_id=d.id,
                cluster_id=d.cluster_id if d.cluster_id is not None else -1,
                phase=phase,
                accuracy=acc,
                loss=loss,
                battery_pct=d.battery_pct,
                bytes_sent=self._sent[d.id],
                bytes_received=self._received[d.id],
            ))
            self._sent[d.id] = 0
            self._received[d.id] = 0
        self.epoch += 1

    def _schedule_block(self) -> list[tuple[str, bool]]:
        """One whole block of ("intra"|"exchange"|"local", refresh) steps.

        Blocks always run to completion, so the epoch budget fills in
        multiples of the block length (lr + gr for method C, 2 for A).
        """
        method = self.plan.method
        if method == "O":
            return [("local", False)]
        if method == "One":
            return [("intra", False)]
        if method == "A":
            return [("intra", False), ("exchange", False)]
        # C: the first exchange of a block reuses the fresh intra-round
        # aggregates; each later one retrains the heads first.
        return [("intra", False)] * self.plan.lr + [
            ("exchange", j > 0) for j in range(self.plan.gr)
        ]

    def _check_clusters(self) -> None:
        method = self.plan.method
        cids = self.fleet.cluster_ids()
        if method in ("C", "A") and len(cids) != 2:
            raise PlanError(f"method {method} requires 2 clusters, have {cids}")
        if method == "One" and len(cids) != 1:
            raise PlanError(f"method One requires a single cluster, have {cids}")
        if method != "O":
            for cid in cids:
                self.fleet.head(cid)  # raises if the election never ran

    def run(self) -> RunResult:
        self._check_clusters()
        status = "completed"
        try:
            while self.epoch < self.plan.ge:
                for kind, refresh in self._schedule_block():
                    if kind == "local":
                        self.local_round()
                    elif kind == "intra":
                        for cid in self.fleet.cluster_ids():
                            self.intra_round(cid)
                    else:
                        self.exchange(refresh_heads=refresh)
                    self._emit(kind)
        except _PartialRun:
            status = "partial"
        finally:
            self.log.close()
        return RunResult(
            status=status,
            records=self.log.records,
            ledger=self.ledger,
            params=self.params,
            exchanges=self.exchanges,
            type_label=self.type_label,
            run_id=self.run_id,
        )


def _run(fleet: Fleet, plan: TrainingPlan, env: SimEnv, method: str) -> RunResult:
    if plan.method != method:
        raise PlanError(f"plan.method is {plan.method!r}, expected {method!r}")
    return Scheduler(fleet, plan, env).run()


def run_method_c(fleet: Fleet, plan: TrainingPlan, env: SimEnv) -> RunResult:
    """Commutative FL: lr intra rounds then gr exchanges per block."""
    return _run(fleet, plan, env, "C")


def run_method_a(fleet: Fleet, plan: TrainingPlan, env: SimEnv) -> RunResult:
    """Alternate FL: intra round and exchange in strict alternation."""
    return _run(fleet, plan, env, "A")


def run_method_one(fleet: Fleet, plan: TrainingPlan, env: SimEnv) -> RunResult:
    """One-server FL: classic FedAvg against the single cluster head."""
    return _run(fleet, plan, env, "One")


def run_method_o(fleet: Fleet, plan: TrainingPlan, env: SimEnv) -> RunResult:
    """Local-only training: no messages, no aggregation."""
    return _run(fleet, plan, env, "O")


def run_plan(fleet: Fleet, plan: TrainingPlan, env: SimEnv) -> RunResult:
    """Dispatch on plan.method."""
    return Scheduler(fleet, plan, env).run()
