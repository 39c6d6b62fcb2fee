"""Experiment orchestration: config -> fleet -> data -> scheduler -> files.

Every random choice derives from the single top-level seed, so rerunning
an identical config reproduces byte-identical CSV/JSON outputs.
"""

from __future__ import annotations

import copy
import csv
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from uavfl.config import ExperimentConfig, resolve_config
from uavfl.data import DatasetPartition, make_blobs, partition_dataset, split_holdout
from uavfl.errors import ConfigError, TrainingDivergedError, UavflError
from uavfl.fleet import Fleet, kmeans_cluster, select_cluster_heads, spawn_fleet
from uavfl.methods import Scheduler, SimEnv, stable_seed
from uavfl.metrics import RunSummary, summarize, write_summary_json
from uavfl.model import ModelLayout, init_params

log = logging.getLogger("uavfl")


@dataclass
class ExperimentResult:
    status: str  # "completed" | "partial" | "diverged" | "failed"
    run_id: str
    type_label: str
    summary: RunSummary | None = None
    csv_path: Path | None = None
    summary_path: Path | None = None
    fleet_path: Path | None = None
    energy_path: Path | None = None
    error: str | None = None


def _load_source(cfg: ExperimentConfig) -> DatasetPartition:
    d = cfg.data
    if d.source == "blobs":
        return make_blobs(
            d.source_size, d.n_features, d.n_classes, d.cluster_std,
            stable_seed(cfg.seed, "source"), d.center_spread,
        )
    path = Path(d.source)
    if path.suffix != ".npz" or not path.exists():
        raise ConfigError(f"data.source: expected 'blobs' or an existing "
                          f".npz file, got {d.source!r}")
    with np.load(path) as archive:
        X = np.asarray(archive["X"], dtype=np.float64)
        y = np.asarray(archive["y"], dtype=np.int64)
    if X.shape[1] != d.n_features or int(y.max()) + 1 > d.n_classes:
        raise ConfigError(
            f"data.source: {path} shapes disagree with n_features/n_classes"
        )
    return DatasetPartition(X, y, np.arange(X.shape[0]))


def build_world(cfg: ExperimentConfig) -> tuple[Fleet, SimEnv]:
    """Spawn, cluster, partition, and initialise shared parameters."""
    fleet = spawn_fleet(cfg.fleet.n, cfg.fleet.area, cfg.fleet.altitude,
                        cfg.fleet.capacity_wh, cfg.fleet.seed)
    k = 1 if cfg.plan.method == "One" else 2
    _, centroids = kmeans_cluster(fleet, k, seed=stable_seed(cfg.seed, "kmeans"))
    select_cluster_heads(fleet, centroids)

    source = _load_source(cfg)
    pool, eval_data = split_holdout(
        source, cfg.data.eval_fraction, stable_seed(cfg.seed, "holdout")
    )
    partitions = partition_dataset(
        pool, fleet.n, cfg.data.per_drone, cfg.data.overlap,
        stable_seed(cfg.seed, "partition"),
    )
    for drone in fleet.drones:
        drone.partition_id = drone.id

    layout = ModelLayout(cfg.data.n_features, cfg.data.n_classes,
                         cfg.model.hidden_units)
    init = init_params(layout, stable_seed(cfg.seed, "init"),
                       cfg.model.init_scale, cfg.model.bytes_per_value)
    env = SimEnv(
        partitions=partitions,
        eval_data=eval_data if eval_data.size else None,
        init=init,
        channel=cfg.channel,
        compute=cfg.compute,
        message_bytes=cfg.model.paper_model_bytes,
    )
    return fleet, env


def run_experiment(cfg: ExperimentConfig, run_id: str | None = None
                   ) -> ExperimentResult:
    """Execute one configured run and write its artifact files."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    fleet, env = build_world(cfg)
    type_label = cfg.plan.type_label(fleet.n)
    run_id = run_id or f"{type_label}_{cfg.seed}"
    env.run_id = run_id
    csv_path = out / f"{run_id}.csv"
    env.log_path = str(csv_path)
    log.info("run %s: method %s, %d drones, ge=%d",
             run_id, cfg.plan.method, fleet.n, cfg.plan.ge)

    scheduler = Scheduler(fleet, cfg.plan, env)
    status = "completed"
    try:
        result = scheduler.run()
        status = result.status
        records = result.records
        ledger = result.ledger
    except TrainingDivergedError as exc:
        scheduler.log.close()
        log.warning("run %s diverged: %s", run_id, exc)
        status = "diverged"
        records = scheduler.log.records
        ledger = scheduler.ledger

    fleet_path = out / f"{run_id}.fleet.json"
    fleet_path.write_text(fleet.snapshot_json() + "\n")
    energy_path = out / f"{run_id}.energy.csv"
    ledger.write_csv(energy_path)

    summary = None
    summary_path = None
    if records:
        summary = summarize(records, type_label)
        summary_path = out / f"{run_id}.summary.json"
        write_summary_json(summary, summary_path)
    return ExperimentResult(
        status=status, run_id=run_id, type_label=type_label, summary=summary,
        csv_path=csv_path, summary_path=summary_path, fleet_path=fleet_path,
        energy_path=energy_path,
    )


def _set_dotted(raw: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = raw
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"grid key {dotted}: {part} is not a mapping")
    node[parts[-1]] = value


SWEEP_COLUMNS = ["run_id", "status", "type_label", "final_accuracy",
                 "final_loss", "avg_battery_pct", "avg_send_gb",
                 "avg_receive_gb", "avg_sr_gb"]


def _grid_points(grid: dict) -> list[dict]:
    """Expand a grid spec into flat {dotted key: value} assignments.

    Plain keys map to value lists and combine as a Cartesian product. The
    optional "points" key lists explicit assignment dicts (non-product row
    sets, e.g. hand-picked lr/gr pairs); each point composes with every
    Cartesian combination of the plain keys.
    """
    points = grid.get("points", [{}])
    if not isinstance(points, list) or not all(isinstance(p, dict) for p in points):
        raise ConfigError("grid key points: expected a list of mappings")
    plain = {k: v for k, v in grid.items() if k != "points"}
    for key, values in plain.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid key {key}: expected a non-empty list")
    keys = sorted(plain)
    expanded = []
    for point in points:
        for combo in itertools.product(*(plain[k] for k in keys)):
            assignment = dict(point)
            assignment.update(zip(keys, combo))
            expanded.append(assignment)
    return expanded


def run_sweep(base_raw: dict, grid: dict, out_dir: str | None = None
              ) -> tuple[list[ExperimentResult], Path]:
    """Run the grid of configs over a base config; failures don't stop it.

    Writes a combined `sweep_summary.csv` sorted by type label and returns
    (per-run results, table path).
    """
    if not grid:
        raise ConfigError("sweep grid is empty")
    results: list[ExperimentResult] = []
    used_ids: set[str] = set()
    for assignment in _grid_points(grid):
        raw = copy.deepcopy(base_raw)
        for key, value in assignment.items():
            _set_dotted(raw, key, value)
        label = ",".join(f"{k}={v}" for k, v in sorted(assignment.items()))
        try:
            cfg = resolve_config(raw, output_override=out_dir)
            run_id = f"{cfg.plan.type_label(cfg.fleet.n)}_{cfg.seed}"
            if run_id in used_ids:  # same label+seed, e.g. a grid over le
                run_id = f"{run_id}-{len(used_ids)}"
            used_ids.add(run_id)
            results.append(run_experiment(cfg, run_id=run_id))
        except UavflError as exc:
            log.warning("sweep point (%s) failed: %s", label, exc)
            results.append(ExperimentResult(
                status="failed", run_id=label, type_label="", error=str(exc),
            ))

    table_dir = Path(out_dir or base_raw.get("output_dir", "runs"))
    table_dir.mkdir(parents=True, exist_ok=True)
    table_path = table_dir / "sweep_summary.csv"
    rows = sorted(results, key=lambda r: (r.type_label, r.run_id))
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for r in rows:
            s = r.summary
            writer.writerow([
                r.run_id, r.status, r.type_label,
                "" if s is None else repr(s.final_accuracy),
                "" if s is None else repr(s.final_loss),
                "" if s is None else repr(s.avg_battery_pct),
                "" if s is None else repr(s.avg_send_gb),
                "" if s is None else repr(s.avg_receive_gb),
                "" if s is None else repr(s.avg_sr_gb),
            ])
    return results, table_path
