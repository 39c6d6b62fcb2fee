"""Computation-energy and communication-energy models.

Units are explicit throughout: battery state is watt-hours, per-event
energy is joules, radio powers enter in dBm and are converted to watts.

Reference channel gain: the configured reference value 28 + 20*log10(f_c)
is a reference PATH LOSS in dB at d0 = 1 m with f_c in GHz (3GPP-style).
Taken literally as a linear gain it would exceed unity and be physically
meaningless, so the linear gain used everywhere is

    g(d) = 10^(-ref_loss_db / 10) * (d / d0)^(-alpha).

Set `ref_gain_db` explicitly to use any other convention (e.g. f_c in Hz).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

from uavfl.errors import LinkInfeasibleError
from uavfl.fleet import DroneState

WH_PER_JOULE = 1.0 / 3600.0


@dataclass(frozen=True)
class ChannelConfig:
    """Radio constants for drone-to-drone links."""

    bandwidth_hz: float = 20e6
    carrier_hz: float = 2e9
    ref_gain_db: float | None = None  # None -> 28 + 20*log10(f_c/GHz)
    ref_distance_m: float = 1.0
    path_loss_exp: float = 2.2
    noise_psd_dbm_hz: float = -174.0
    tx_power_dbm: float = 10.0

    def __post_init__(self):
        if self.bandwidth_hz <= 0 or self.ref_distance_m <= 0:
            raise ValueError("bandwidth and reference distance must be positive")
        if self.path_loss_exp <= 0:
            raise ValueError("path loss exponent must be positive")

    @property
    def ref_loss_db(self) -> float:
        if self.ref_gain_db is not None:
            return self.ref_gain_db
        return 28.0 + 20.0 * math.log10(self.carrier_hz / 1e9)

    @property
    def tx_power_w(self) -> float:
        return dbm_to_watts(self.tx_power_dbm)

    @property
    def noise_power_w(self) -> float:
        return dbm_to_watts(self.noise_psd_dbm_hz) * self.bandwidth_hz


@dataclass(frozen=True)
class ComputePowerConfig:
    """Average training power draw and the battery it drains.

    No GPU is measured here, so per-epoch wall time is a configured
    constant: `seconds_per_1k_examples` seconds per 1000 examples per epoch.
    """

    avg_power_w: float = 50.0
    battery_capacity_wh: float = 274.0
    seconds_per_1k_examples: float = 1.0

    def __post_init__(self):
        if self.avg_power_w <= 0 or self.battery_capacity_wh <= 0:
            raise ValueError("power and capacity must be positive")
        if self.seconds_per_1k_examples < 0:
            raise ValueError("training-time constant must be >= 0")

    def training_time_s(self, n_examples: int, epochs: int) -> float:
        return self.seconds_per_1k_examples * n_examples / 1000.0 * epochs


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def compute_energy(p: ComputePowerConfig, t_tr: float) -> tuple[float, float]:
    """Training-energy draw: (energy in Wh, fraction of battery capacity)."""
    if t_tr < 0:
        raise ValueError("training time must be >= 0")
    energy_wh = p.avg_power_w * t_tr * WH_PER_JOULE
    return energy_wh, energy_wh / p.battery_capacity_wh

def channel_gain(d: float, cfg: ChannelConfig) -> float:
    """Linear channel gain at distance d; clamped to d0 below the reference."""
    if d <= 0:
        raise ValueError(f"distance must be positive, got {d}")
    d = max(d, cfg.ref_distance_m)
    g0 = 10.0 ** (-cfg.ref_loss_db / 10.0)
    return g0 * (d / cfg.ref_distance_m) ** (-cfg.path_loss_exp)


def min_transmit_time(s_bits: float, d: float, cfg: ChannelConfig) -> float:
    """Shannon-rate lower bound on the time to move s_bits over the link."""
    if s_bits < 0:
        raise ValueError("payload size must be >= 0")
    if s_bits == 0:
        return 0.0
    snr = channel_gain(d, cfg) * cfg.tx_power_w / cfg.noise_power_w
    rate = cfg.bandwidth_hz * math.log2(1.0 + snr)
    if rate < 1.0:
        raise LinkInfeasibleError(
            f"link rate {rate:.3g} bit/s below 1 bit/s at d={d} m"
        )
    return s_bits / rate


def comm_energy(t: float, cfg: ChannelConfig) -> float:
    """Transmit energy in joules for a transmission lasting t seconds."""
    if t < 0:
        raise ValueError("transmit time must be >= 0")
    return t * cfg.tx_power_w


def debit_battery(drone: DroneState, joules: float) -> DroneState:
    """Drain the drone's battery, flooring at zero and flagging depletion."""
    if joules < 0:
        raise ValueError("cannot debit negative energy")
    drone.battery_remaining = max(0.0, drone.battery_remaining - joules * WH_PER_JOULE)
    if drone.battery_remaining == 0.0:
        drone.depleted = True
    return drone


@dataclass(frozen=True)
class EnergyLedgerEntry:
    drone_id: int
    kind: str  # "compute" | "transmit"
    joules: float
    duration_s: float
    bytes: int = 0
    peer: int | None = None
    round: int | None = None


@dataclass
class EnergyLedger:
    """Append-only log of every energy-consuming event in a run."""

    entries: list[EnergyLedgerEntry] = field(default_factory=list)

    def add_compute(self, drone_id: int, joules: float, duration_s: float,
                    round: int | None = None) -> None:
        self.entries.append(
            EnergyLedgerEntry(drone_id, "compute", joules, duration_s, round=round)
        )

    def add_transmit(self, drone_id: int, joules: float, duration_s: float,
                     bytes: int, peer: int, round: int | None = None) -> None:
        self.entries.append(
            EnergyLedgerEntry(drone_id, "transmit", joules, duration_s, bytes, peer, round)
        )

    def total_joules(self, drone_id: int) -> float:
        return sum(e.joules for e in self.entries if e.drone_id == drone_id)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["drone_id", "kind", "joules", "seconds", "bytes", "peer", "round"]
            )
            for e in self.entries:
                writer.writerow([
                    e.drone_id, e.kind, repr(e.joules), repr(e.duration_s),
                    e.bytes, "" if e.peer is None else e.peer,
                    "" if e.round is None else e.round,
                ])
