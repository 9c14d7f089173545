"""Command line entry point.

    metalab run CONFIG [--check] [--seed N] [--output DIR] [--trials K]

Exit codes: 0 success, 1 configuration error, 2 runtime or numeric error,
3 failed guarantee under ``--check``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, load_config
from .experiments import run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("metalab")


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metalab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("config", help="path to a YAML experiment config")
    run.add_argument("--check", action="store_true", help="exit 3 when a guarantee check fails")
    run.add_argument("--seed", type=_u64, help="override the config seed")
    run.add_argument("--output", help="override the output directory")
    run.add_argument("--trials", type=int, help="override params.trials")
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config, seed=args.seed, trials=args.trials, output=args.output)
    except ConfigError as exc:
        for issue in exc.issues:
            print(f"config error {issue}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error [parse] <file>: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("running %s (config %s) into %s", cfg.kind, cfg.config_hash[:12], cfg.output)
    try:
        report = run_experiment(cfg)
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"kind": report.kind, "config_hash": report.config_hash, **report.summary},
                     sort_keys=True))
    if args.check and report.passed is False:
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
