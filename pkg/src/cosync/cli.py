"""Command line entry point.

``cosync run --config scenario.json --out results/`` runs one scenario and
writes ``events.csv``, ``stats.json`` and ``states.json``. Exit codes: 0 on
success, 1 for configuration errors, 2 for protocol or engine errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, CosyncError
from .export import export_results, format_protocol_trace
from .scenario import data_path, load_scenario, run_scenario, with_overrides

log = logging.getLogger("cosync")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ENGINE = 2


def _config_path(value: str) -> Path:
    path = Path(value)
    if path.exists():
        return path
    # fall back to a bundled scenario name such as scenario_netsim.json
    bundled = data_path(value)
    return bundled if bundled.is_file() else path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cosync", description="Agent/network co-simulation runner")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario and export its results")
    run.add_argument("--config", required=True, help="scenario JSON file (or name of a bundled scenario)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--mode", help="override the scenario mode: ideal, netsim or netsim-wire")
    run.add_argument("--seed", type=int, help="regenerate the overlay with this seed")
    run.add_argument("--trace", action="store_true",
                     help="also write protocol.jsonl and print the coupling trace to stderr")
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = load_scenario(_config_path(args.config))
        cfg = with_overrides(cfg, mode=args.mode, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        report, stats = run_scenario(cfg)
    except CosyncError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ENGINE

    try:
        written = export_results(report, stats, args.out, trace=args.trace)
    except OSError as exc:
        print(f"cannot write results: {exc}", file=sys.stderr)
        return EXIT_ENGINE

    if args.trace:
        for line in format_protocol_trace(report):
            print(line, file=sys.stderr)
    term = stats.termination_time_us
    print(f"mode={cfg.mode} termination_us={term if term is not None else 'none'} "
          f"solved={len(stats.solved)} sent={stats.messages_sent} "
          f"delivered={stats.messages_delivered} lost={stats.messages_lost}")
    for path in written:
        log.info("wrote %s", path)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
