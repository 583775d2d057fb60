"""Command-line front end.

    unideal run CONFIG [--out DIR] [--seeds a..b] [--methods m1,m2]

Log verbosity comes from the ``UNIDEAL_LOG_LEVEL`` environment variable
(default WARNING). Exit status is 0 only if every cell succeeded.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import kernels
from .config import parse_config, parse_seed_range
from .errors import ConfigurationError, UnidealError
from .federation import Method
from .suite import render_table, run_suite

EXIT_OK = 0
EXIT_CELL_FAILURE = 1
EXIT_BAD_CONFIG = 2


def _setup_logging() -> None:
    level = os.environ.get("UNIDEAL_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unideal", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment suite from a config file")
    run.add_argument("config", help="YAML or JSON experiment file")
    run.add_argument("--out", help="output directory (overrides out_dir)")
    run.add_argument("--seeds", help="seed range 'a..b' (inclusive) or a comma list")
    run.add_argument("--methods", help="comma-separated methods, e.g. local,unideal:inv_l1")
    sub.add_parser("backend", help="print the active kernel backend")
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.command == "backend":
        print(kernels.BACKEND)
        return EXIT_OK
    try:
        cfg = parse_config(args.config)
        seeds = parse_seed_range(args.seeds) if args.seeds else None
        methods = [m.strip() for m in args.methods.split(",") if m.strip()] if args.methods else None
        for m in methods or ():
            Method.parse(m)
    except ConfigurationError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except UnidealError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    report = run_suite(cfg, args.out, methods=methods, seeds=seeds)
    sys.stdout.write(render_table(report))
    for cell in report.failures:
        print(f"FAILED {cell.method} seed {cell.seed}: {cell.error}", file=sys.stderr)
    return EXIT_CELL_FAILURE if report.failures else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
