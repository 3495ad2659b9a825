"""Command line entry point.

    reliable-cdc run <scenario> [--config PATH] [--seed N] [--out DIR] [--override key=value ...]
    reliable-cdc write-config [PATH]
    reliable-cdc list
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .. import __version__
from ..errors import ReliableCDCError
from .config import load_config, render_config
from .output import write_result
from .scenarios import SCENARIOS

log = logging.getLogger("reliable_cdc")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reliable-cdc", description="Reputation-aware coded computing simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario and write CSV files")
    run.add_argument("scenario", choices=sorted(SCENARIOS))
    run.add_argument("--config", help="flat key = value config file")
    run.add_argument("--seed", type=int, help="random seed (overrides the config file)")
    run.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    run.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE",
        help="set any config field; repeatable",
    )

    wc = sub.add_parser("write-config", help="print or write the default config with comments")
    wc.add_argument("path", nargs="?", help="file to write; stdout when omitted")

    sub.add_parser("list", help="list scenario names")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.command == "list":
        for name in sorted(SCENARIOS):
            print(name)
        return 0

    if args.command == "write-config":
        text = render_config()
        if args.path:
            with open(args.path, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return 0

    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed = {args.seed}")
    try:
        cfg = load_config(args.config, overrides)
    except (ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    log.info("running %s with seed %d", args.scenario, cfg.seed)
    start = time.perf_counter()
    try:
        result = SCENARIOS[args.scenario](cfg)
    except ReliableCDCError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    wall = time.perf_counter() - start
    for path in write_result(args.out, args.scenario, cfg, result, __version__, wall):
        print(path)
    for key, value in result.notes.items():
        log.info("%s: %s", key, value)
    return 0


if __name__ == "__main__":
    sys.exit(main())
