"""Experiment configuration: defaults, file loading, strict validation.

Files may be JSON or YAML. Unknown keys are rejected, and defaults follow
the evaluated radio/fleet setup (274 Wh batteries, 20 MHz bandwidth,
2 GHz carrier, path-loss exponent 2.2, -174 dBm/Hz noise, 10 dBm transmit
power, 30 global epochs).
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from uavfl.energy import ChannelConfig, ComputePowerConfig
from uavfl.errors import ConfigError, PlanError
from uavfl.methods import TrainingPlan, stable_seed


def default_config_dict() -> dict:
    return {
        "seed": 0,
        "output_dir": "runs",
        "fleet": {
            "n": 10,
            "area": [10.0, 10.0],
            "altitude": 0.0,
            "capacity_wh": 274.0,
            "seed": None,  # derived from the top-level seed
        },
        "plan": {
            "method": "C",
            "le": 3,
            "ge": 30,
            "lr": 5,
            "gr": 5,
            "eta": 0.05,
            "batch_size": 32,
            "client_fraction": 1.0,
            "exchange_weighting": "samples",
            "seed": None,  # derived from the top-level seed
        },
        "channel": {
            "bandwidth_hz": 20e6,
            "carrier_hz": 2e9,
            "ref_gain_db": None,  # None -> 28 + 20*log10(f_c/GHz)
            "ref_distance_m": 1.0,
            "path_loss_exp": 2.2,
            "noise_psd_dbm_hz": -174.0,
            "tx_power_dbm": 10.0,
        },
        "compute": {
            "avg_power_w": 50.0,
            "battery_capacity_wh": None,  # None -> fleet capacity
            "seconds_per_1k_examples": 1.0,
        },
        "data": {
            "source": "blobs",  # or a path to an .npz with arrays X, y
            "per_drone": 100,
            "overlap": 0.0,
            "eval_fraction": 0.1,
            "source_size": None,  # None -> smallest size keeping partitions disjoint
            "n_features": 16,
            "n_classes": 5,
            "cluster_std": 2.5,
            "center_spread": 4.0,
        },
        "model": {
            "hidden_units": 0,
            "bytes_per_value": 4,
            "paper_model_bytes": None,  # override message size s for comm accounting
            "init_scale": 0.01,
        },
    }


def _merge(user: dict, defaults: dict, path: str = "") -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in user.items():
        where = f"{path}{key}"
        if key not in defaults:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a mapping")
            merged[key] = _merge(value, defaults[key], where + ".")
        else:
            merged[key] = value
    return merged


@dataclass(frozen=True)
class FleetConfig:
    n: int
    area: tuple[float, float]
    altitude: float
    capacity_wh: float
    seed: int


@dataclass(frozen=True)
class DataConfig:
    source: str
    per_drone: int
    overlap: float
    eval_fraction: float
    source_size: int
    n_features: int
    n_classes: int
    cluster_std: float
    center_spread: float


@dataclass(frozen=True)
class ModelConfig:
    hidden_units: int
    bytes_per_value: int
    paper_model_bytes: int | None
    init_scale: float


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: str
    fleet: FleetConfig
    plan: TrainingPlan
    channel: ChannelConfig
    compute: ComputePowerConfig
    data: DataConfig
    model: ModelConfig
    raw: dict  # canonical resolved dict; save/load round-trips exactly

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def _require(cond: bool, where: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{where}: {message}")


def _auto_source_size(n: int, per_drone: int, overlap: float,
                      eval_fraction: float) -> int:
    """Smallest source keeping overlap-0 assignments replacement-free."""
    core = int(round(overlap * per_drone))
    needed = core + n * (per_drone - core)
    if eval_fraction == 0:
        return needed
    total = math.ceil(needed / (1.0 - eval_fraction))
    while total - int(round(eval_fraction * total)) < needed:
        total += 1
    return total


def resolve_config(raw: dict, seed_override: int | None = None,
                   output_override: str | None = None) -> ExperimentConfig:
    """Fill defaults, derive child seeds, and validate every invariant."""
    merged = _merge(raw, default_config_dict())
    if seed_override is not None:
        merged["seed"] = seed_override
    if output_override is not None:
        merged["output_dir"] = output_override

    top = merged["seed"]
    _require(isinstance(top, int), "seed", f"must be an integer, got {top!r}")

    f = merged["fleet"]
    if f["seed"] is None:
        f["seed"] = stable_seed(top, "fleet")
    _require(isinstance(f["n"], int) and f["n"] >= 2, "fleet.n",
             "must be an integer >= 2")
    _require(len(f["area"]) == 2 and min(f["area"]) > 0, "fleet.area",
             "must be two positive dimensions")
    _require(f["altitude"] >= 0, "fleet.altitude", "must be >= 0")
    _require(f["capacity_wh"] > 0, "fleet.capacity_wh", "must be > 0")
    fleet = FleetConfig(f["n"], tuple(float(v) for v in f["area"]),
                        float(f["altitude"]), float(f["capacity_wh"]), f["seed"])

    p = merged["plan"]
    if p["seed"] is None:
        p["seed"] = stable_seed(top, "plan")
    try:
        plan = TrainingPlan(
            method=p["method"], le=p["le"], ge=p["ge"], lr=p["lr"], gr=p["gr"],
            eta=float(p["eta"]), batch_size=p["batch_size"], seed=p["seed"],
            client_fraction=float(p["client_fraction"]),
            exchange_weighting=p["exchange_weighting"],
        )
        plan.validate()
    except (PlanError, ValueError, TypeError) as exc:
        raise ConfigError(f"plan: {exc}")
    _require(plan.eta > 0, "plan.eta", "must be > 0 for a run")

    c = merged["channel"]
    try:
        channel = ChannelConfig(
            bandwidth_hz=float(c["bandwidth_hz"]),
            carrier_hz=float(c["carrier_hz"]),
            ref_gain_db=None if c["ref_gain_db"] is None else float(c["ref_gain_db"]),
            ref_distance_m=float(c["ref_distance_m"]),
            path_loss_exp=float(c["path_loss_exp"]),
            noise_psd_dbm_hz=float(c["noise_psd_dbm_hz"]),
            tx_power_dbm=float(c["tx_power_dbm"]),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"channel: {exc}")

    comp = merged["compute"]
    capacity = comp["battery_capacity_wh"]
    if capacity is None:
        capacity = fleet.capacity_wh
    try:
        compute = ComputePowerConfig(
            avg_power_w=float(comp["avg_power_w"]),
            battery_capacity_wh=float(capacity),
            seconds_per_1k_examples=float(comp["seconds_per_1k_examples"]),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"compute: {exc}")

    d = merged["data"]
    _require(d["per_drone"] >= 1, "data.per_drone", "must be >= 1")
    _require(0 <= d["overlap"] <= 1, "data.overlap", "must be in [0, 1]")
    _require(0 <= d["eval_fraction"] < 1, "data.eval_fraction",
             "must be in [0, 1)")
    if plan.method in ("C", "A"):
        _require(d["eval_fraction"] > 0, "data.eval_fraction",
                 "methods C and A need a held-out split to score exchanges")
    _require(d["n_features"] >= 1, "data.n_features", "must be >= 1")
    _require(d["n_classes"] >= 2, "data.n_classes", "must be >= 2")
    _require(d["cluster_std"] > 0, "data.cluster_std", "must be > 0")
    source_size = d["source_size"]
    if source_size is None and d["source"] == "blobs":
        source_size = _auto_source_size(
            fleet.n, d["per_drone"], float(d["overlap"]), float(d["eval_fraction"])
        )
    data = DataConfig(
        source=d["source"], per_drone=d["per_drone"], overlap=float(d["overlap"]),
        eval_fraction=float(d["eval_fraction"]),
        source_size=source_size,
        n_features=d["n_features"], n_classes=d["n_classes"],
        cluster_std=float(d["cluster_std"]),
        center_spread=float(d["center_spread"]),
    )

    m = merged["model"]
    _require(m["hidden_units"] >= 0, "model.hidden_units", "must be >= 0")
    _require(m["bytes_per_value"] in (4, 8), "model.bytes_per_value",
             "must be 4 or 8")
    if m["paper_model_bytes"] is not None:
        _require(m["paper_model_bytes"] >= 1, "model.paper_model_bytes",
                 "must be >= 1 when set")
    _require(m["init_scale"] >= 0, "model.init_scale", "must be >= 0")
    model = ModelConfig(m["hidden_units"], m["bytes_per_value"],
                        m["paper_model_bytes"], float(m["init_scale"]))

    merged["fleet"] = dict(f)
    merged["plan"] = dict(p)
    return ExperimentConfig(
        seed=top, output_dir=merged["output_dir"], fleet=fleet, plan=plan,
        channel=channel, compute=compute, data=data, model=model, raw=merged,
    )


def load_config(path, seed_override: int | None = None,
                output_override: str | None = None) -> ExperimentConfig:
    """Parse and validate a JSON/YAML experiment config."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text()
    try:
        if path.suffix == ".json":
            raw = json.loads(text)
        else:
            raw = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse: {exc}")
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return resolve_config(raw, seed_override, output_override)


def save_config(cfg: ExperimentConfig, path) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        if path.suffix == ".json":
            json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        else:
            yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
