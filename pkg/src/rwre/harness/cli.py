"""Command line entry point: ``rwre <subcommand> --config PATH``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from rwre import __version__
from rwre.harness.config import EXPERIMENTS, TOOLS, ConfigError, parse_config
from rwre.harness.runner import EXIT_CONFIG, run_experiment, write_trace

log = logging.getLogger("rwre")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rwre", description="Monte Carlo experiments for random walks in random environment.")
    parser.add_argument("--version", action="version", version=f"rwre {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name in (*EXPERIMENTS, *TOOLS):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="sectioned plain-text config file")
        p.add_argument("--out-dir", help="artifact directory (overrides [output] dir)")
        p.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
        p.add_argument("--seed-override", type=_u64, help="replace [experiment] master_seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
        config = parse_config(text, args.command)
    except ConfigError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed_override is not None:
        config = replace(config, master_seed=args.seed_override)
    for notice in config.notices:
        print(f"notice: {notice}", file=sys.stderr)

    try:
        if args.command == "validate":
            print(json.dumps(config.echo(), indent=2, sort_keys=True))
            return 0
        if args.command == "trace":
            print(write_trace(config, args.out_dir))
            return 0
        code, paths = run_experiment(config, threads=args.threads, out_dir=args.out_dir)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for path in paths:
        print(path)
    return code


if __name__ == "__main__":
    sys.exit(main())
