"""Command-line front end: run / sweep / summarize.

Exit codes: 0 all runs completed, 2 configuration problem, 3 training
diverged, 4 a run terminated early (battery exhaustion), 1 anything else.
Set UAVFL_LOG=debug|info|warning to control verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from uavfl import kernels
from uavfl.config import load_config, resolve_config
from uavfl.driver import run_experiment, run_sweep
from uavfl.errors import ConfigError, UavflError
from uavfl.metrics import read_records_csv, summarize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_PARTIAL = 4

_STATUS_EXIT = {"completed": EXIT_OK, "partial": EXIT_PARTIAL,
                "diverged": EXIT_DIVERGED, "failed": EXIT_CONFIG}


def _setup_logging() -> None:
    level = os.environ.get("UAVFL_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uavfl",
        description="Simulate cluster-based federated learning over a UAV "
                    "fleet with energy and communication accounting "
                    f"(kernel backend: {kernels.ACTIVE_NAME})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one configured experiment")
    run_p.add_argument("--config", help="JSON/YAML config (omit for defaults)")
    run_p.add_argument("--seed", type=int, help="override the top-level seed")
    run_p.add_argument("--out", help="override the output directory")

    sweep_p = sub.add_parser("sweep", help="run a Cartesian parameter grid")
    sweep_p.add_argument("--config", help="base config (omit for defaults)")
    sweep_p.add_argument("--grid", required=True,
                         help="JSON/YAML mapping of dotted keys to value lists")
    sweep_p.add_argument("--out", help="override the output directory")

    summ_p = sub.add_parser("summarize", help="summarize a round-records CSV")
    summ_p.add_argument("--in", dest="input", required=True,
                        help="per-round CSV produced by a run")
    summ_p.add_argument("--label", help="type label (default: from run_id)")
    return parser


def _load_mapping(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"file {p} does not exist")
    if p.suffix == ".json":
        data = json.loads(p.read_text())
    else:
        data = yaml.safe_load(p.read_text())
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return data


def _cmd_run(args) -> int:
    if args.config:
        cfg = load_config(args.config, seed_override=args.seed,
                          output_override=args.out)
    else:
        cfg = resolve_config({}, seed_override=args.seed,
                             output_override=args.out)
    result = run_experiment(cfg)
    if result.summary is not None:
        print(json.dumps(result.summary.to_dict(), indent=2, sort_keys=True))
    print(f"status: {result.status}  ->  {result.csv_path}")
    return _STATUS_EXIT.get(result.status, 1)


def _cmd_sweep(args) -> int:
    base = _load_mapping(args.config) if args.config else {}
    resolve_config(base)  # fail fast on a broken base config
    grid = _load_mapping(args.grid)
    results, table_path = run_sweep(base, grid, out_dir=args.out)
    worst = EXIT_OK
    for r in results:
        print(f"{r.run_id}: {r.status}" + (f" ({r.error})" if r.error else ""))
        worst = max(worst, _STATUS_EXIT.get(r.status, 1))
    print(f"table: {table_path}")
    return worst


def _cmd_summarize(args) -> int:
    records = read_records_csv(args.input)
    summary = summarize(records, args.label)
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_summarize(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UavflError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
