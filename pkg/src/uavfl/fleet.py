"""UAV fleet construction, K-means clustering and head election.

Drones are placed uniformly at random in a rectangular area at a shared
constant altitude (the distance model is 3-D, placement is planar unless
the altitude is overridden). Positions are static for the whole run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from uavfl.errors import FleetError


@dataclass(frozen=True)
class Position:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError("position coordinates must be finite")
        if self.z < 0:
            raise ValueError("altitude must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


def distance(q: Position, q2: Position) -> float:
    """Euclidean 3-D distance between two drones, in meters."""
    return float(np.linalg.norm(q.as_array() - q2.as_array()))


@dataclass
class DroneState:
    """One UAV: placement, battery bookkeeping, cluster role, model."""

    id: int
    position: Position
    battery_capacity: float  # Wh
    battery_remaining: float  # Wh
    cluster_id: int | None = None
    is_head: bool = False
    params: object = None  # ModelParams once training starts
    partition_id: int | None = None
    depleted: bool = False

    @property
    def battery_pct(self) -> float:
        return self.battery_remaining / self.battery_capacity

    @property
    def alive(self) -> bool:
        return not self.depleted


@dataclass
class Fleet:
    drones: list[DroneState]
    area: tuple[float, float]
    rng_seed: int

    def __post_init__(self):
        ids = sorted(d.id for d in self.drones)
        if ids != list(range(len(ids))):
            raise FleetError("drone ids must be dense 0..N-1")

    @property
    def n(self) -> int:
        return len(self.drones)

    def positions(self) -> np.ndarray:
        return np.stack([d.position.as_array() for d in self.drones])

    def cluster_ids(self) -> list[int]:
        return sorted({d.cluster_id for d in self.drones if d.cluster_id is not None})

    def members(self, cluster_id: int) -> list[DroneState]:
        return [d for d in self.drones if d.cluster_id == cluster_id]

    def head(self, cluster_id: int) -> DroneState:
        heads = [d for d in self.members(cluster_id) if d.is_head]
        if len(heads) != 1:
            raise FleetError(f"cluster {cluster_id} has {len(heads)} heads")
        return heads[0]

    def snapshot(self) -> list[dict]:
        """Layout dump consumed by the CLI: one row per drone."""
        return [
            {
                "id": d.id,
                "x": d.position.x,
                "y": d.position.y,
                "z": d.position.z,
                "cluster": d.cluster_id,
                "is_head": d.is_head,
                "battery_pct": d.battery_pct,
            }
            for d in self.drones
        ]

    def snapshot_json(self) -> str:
        return json.dumps(self.snapshot(), indent=2, sort_keys=True)


def spawn_fleet(n: int, area: tuple[float, float], altitude: float,
                capacity_wh: float, seed: int) -> Fleet:
    """Place n fully-charged drones uniformly over the area.

    Identical (n, area, seed) reproduce bitwise-identical positions.
    """
    if n < 2:
        raise FleetError(f"need at least 2 drones to form two clusters, got {n}")
    if area[0] <= 0 or area[1] <= 0:
        raise FleetError(f"area dimensions must be positive, got {area}")
    if capacity_wh <= 0:
        raise FleetError("battery capacity must be positive")
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0.0, area[0], n)
    ys = rng.uniform(0.0, area[1], n)
    drones = [
        DroneState(
            id=i,
            position=Position(float(xs[i]), float(ys[i]), float(altitude)),
            battery_capacity=capacity_wh,
            battery_remaining=capacity_wh,
        )
        for i in range(n)
    ]
    return Fleet(drones=drones, area=tuple(area), rng_seed=seed)


def _plusplus_init(points: np.ndarray, k: int, rng) -> np.ndarray:
    """k-means++ seeding: squared-distance-weighted centroid choices."""
    n = points.shape[0]
    centroids = [points[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(
            [np.sum((points - c) ** 2, axis=1) for c in centroids], axis=0
        )
        total = d2.sum()
        if total == 0:  # all remaining points coincide with a centroid
            centroids.append(points[rng.integers(n)])
            continue
        centroids.append(points[rng.choice(n, p=d2 / total)])
    return np.stack(centroids)


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iters: int
           ) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations until the assignment is a fixed point.

    Returns (labels, centroids, per-iteration objective history). An empty
    cluster is repaired by re-seeding its centroid from the point farthest
    from its assigned centroid.
    """
    k = centroids.shape[0]
    labels = None
    history: list[float] = []
    for _ in range(max_iters):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        for c in range(k):
            if not np.any(new_labels == c):
                farthest = int(np.argmax(d2[np.arange(len(points)), new_labels]))
                centroids[c] = points[farthest]
                new_labels[farthest] = c
        history.append(float(d2[np.arange(len(points)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            centroids[c] = points[labels == c].mean(axis=0)
    obj = float(((points - centroids[labels]) ** 2).sum())
    history.append(obj)
    return labels, centroids, history


def kmeans_cluster(fleet: Fleet, k: int, max_iters: int = 100,
                   seed: int = 0, restarts: int = 5
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Cluster drone positions with k-means++ seeded Lloyd iterations.

    Runs `restarts` seeded restarts and keeps the assignment with the best
    within-cluster sum of squared distances. Labels each drone in place and
    returns (labels, centroids).
    """
    if k > fleet.n:
        raise FleetError(f"k={k} exceeds fleet size {fleet.n}")
    if k < 1 or max_iters < 1:
        raise FleetError("k and max_iters must be >= 1")
    points = fleet.positions()
    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        labels, centroids, history = _lloyd(
            points, _plusplus_init(points, k, rng).copy(), max_iters
        )
        if best is None or history[-1] < best[2]:
            best = (labels, centroids, history[-1])
    labels, centroids, _ = best
    for drone, label in zip(fleet.drones, labels):
        drone.cluster_id = int(label)
    return labels, centroids


def select_cluster_heads(fleet: Fleet, centroids: np.ndarray) -> dict[int, int]:
    """Elect the drone nearest its cluster centroid as head; ties -> lowest id.

    Idempotent: previous head flags are cleared first.
    """
    for d in fleet.drones:
        d.is_head = False
    heads: dict[int, int] = {}
    for cid in fleet.cluster_ids():
        members = sorted(fleet.members(cid), key=lambda d: d.id)
        dists = [
            float(np.linalg.norm(d.position.as_array() - centroids[cid]))
            for d in members
        ]
        head = members[int(np.argmin(dists))]
        head.is_head = True
        heads[cid] = head.id
    return heads
