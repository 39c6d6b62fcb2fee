"""Per-round logbook and end-of-run summaries.

One CSV row per (drone, global epoch); a JSON summary sidecar mirrors the
per-method comparison tables. GB means 10^9 bytes throughout.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, fields

from uavfl.errors import PartialLogError

PHASES = ("intra", "exchange", "local")

CSV_HEADER = [
    "run_id", "global_epoch", "drone_id", "cluster_id", "phase",
    "accuracy", "loss", "battery_pct", "bytes_sent", "bytes_received",
    "bytes_total",
]


@dataclass(frozen=True)
class RoundRecord:
    run_id: str
    global_epoch: int
    drone_id: int
    cluster_id: int
    phase: str
    accuracy: float
    loss: float
    battery_pct: float
    bytes_sent: int
    bytes_received: int
    bytes_total: int = -1

    def __post_init__(self):
        if self.bytes_total < 0:
            object.__setattr__(
                self, "bytes_total", self.bytes_sent + self.bytes_received
            )

    def validate(self) -> None:
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        if not 0 <= self.accuracy <= 1:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")
        if not 0 <= self.battery_pct <= 1:
            raise ValueError(f"battery_pct {self.battery_pct} outside [0, 1]")
        if self.bytes_sent < 0 or self.bytes_received < 0:
            raise ValueError("byte counts must be >= 0")
        if self.bytes_total != self.bytes_sent + self.bytes_received:
            raise ValueError("bytes_total != bytes_sent + bytes_received")

    def row(self) -> list:
        return [
            self.run_id, self.global_epoch, self.drone_id, self.cluster_id,
            self.phase, repr(self.accuracy), repr(self.loss),
            repr(self.battery_pct), self.bytes_sent, self.bytes_received,
            self.bytes_total,
        ]


class RoundLog:
    """Append-only metrics sink; optionally mirrored to a CSV file."""

    def __init__(self, path=None):
        self.records: list[RoundRecord] = []
        self._fh = None
        self._writer = None
        if path is not None:
            try:
                self._fh = open(path, "w", newline="")
                self._writer = csv.writer(self._fh)
                self._writer.writerow(CSV_HEADER)
            except OSError as exc:
                raise PartialLogError(f"cannot open metrics sink {path}: {exc}")

    def append(self, record: RoundRecord) -> None:
        self.records.append(record)
        if self._writer is not None:
            try:
                self._writer.writerow(record.row())
            except (OSError, ValueError) as exc:
                raise PartialLogError(f"metrics sink write failed: {exc}")

    def close(self) -> None:
        if self._fh is not None:
            try:
                self._fh.flush()
                self._fh.close()
            except (OSError, ValueError) as exc:
                raise PartialLogError(f"metrics sink flush failed: {exc}")
            self._fh = None


def record_round(sink: RoundLog, record: RoundRecord) -> None:
    """Validate and append one record, preserving arrival order."""
    record.validate()
    sink.append(record)


@dataclass(frozen=True)
class RunSummary:
    """One comparison-table row. Accuracy and battery are percentages."""

    type_label: str
    final_accuracy: float
    final_loss: float
    avg_battery_pct: float
    avg_send_gb: float
    avg_receive_gb: float
    avg_sr_gb: float

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def summarize(records: list[RoundRecord], type_label: str | None = None
              ) -> RunSummary:
    """Collapse a run's records into a table row.

    Final accuracy/loss are the fleet average at the last global epoch;
    battery is the end-of-run percentage averaged over drones; byte columns
    are per-drone run totals averaged over drones.
    """
    if not records:
        raise ValueError("no records to summarize")
    run_ids = {r.run_id for r in records}
    if len(run_ids) != 1:
        raise ValueError(f"records mix run_ids: {sorted(run_ids)}")
    run_id = records[0].run_id
    if type_label is None:
        type_label = run_id.rsplit("_", 1)[0]

    last = max(r.global_epoch for r in records)
    finals = [r for r in records if r.global_epoch == last]
    drones = sorted({r.drone_id for r in records})
    sent = {d: 0 for d in drones}
    received = {d: 0 for d in drones}
    for r in records:
        sent[r.drone_id] += r.bytes_sent
        received[r.drone_id] += r.bytes_received

    def mean(xs):
        xs = list(xs)
        return sum(xs) / len(xs)

    avg_send = mean(sent.values()) / 1e9
    avg_receive = mean(received.values()) / 1e9
    return RunSummary(
        type_label=type_label,
        final_accuracy=100.0 * mean(r.accuracy for r in finals),
        final_loss=mean(r.loss for r in finals),
        avg_battery_pct=100.0 * mean(r.battery_pct for r in finals),
        avg_send_gb=avg_send,
        avg_receive_gb=avg_receive,
        avg_sr_gb=avg_send + avg_receive,
    )


def write_summary_json(summary: RunSummary, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_records_csv(path) -> list[RoundRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: unexpected CSV header {reader.fieldnames}")
        for row in reader:
            records.append(RoundRecord(
                run_id=row["run_id"],
                global_epoch=int(row["global_epoch"]),
                drone_id=int(row["drone_id"]),
                cluster_id=int(row["cluster_id"]),
                phase=row["phase"],
                accuracy=float(row["accuracy"]),
                loss=float(row["loss"]),
                battery_pct=float(row["battery_pct"]),
                bytes_sent=int(row["bytes_sent"]),
                bytes_received=int(row["bytes_received"]),
                bytes_total=int(row["bytes_total"]),
            ))
    return records
