"""Command-line entry point: ``smc-forget <subcommand> --config PATH``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from .config import load_config, with_overrides
from .errors import SMCError
from .experiments import COMMANDS, CSV_COLUMNS, CommandResult, ResultRecord, cmd_verify_bounds

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2
THREADS_ENV = "SMC_FORGET_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2, which is reserved for failed checks
    def error(self, message):
        raise UsageError(message)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smc-forget", description="Particle filter forgetting experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--seed", type=_u64)
        s.add_argument("--threads", type=int)
        s.add_argument("--out", type=Path)
        if name == "verify-bounds":
            s.add_argument("--tamper-bound", type=float, default=1.0, help=argparse.SUPPRESS)
    return p


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_records(path: Path, records: list[ResultRecord]) -> None:
    write_csv(path, CSV_COLUMNS, (r.row() for r in records))


def _threads(arg) -> int | None:
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer") from None
    return None


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = with_overrides(load_config(args.config), seed=args.seed, threads=_threads(args.threads),
                             out=args.out)
    except (UsageError, SMCError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "verify-bounds":
            result: CommandResult = cmd_verify_bounds(cfg, tamper=args.tamper_bound)
        else:
            result = COMMANDS[args.command](cfg)
    except SMCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    outdir = Path(cfg.output.directory)
    write_records(outdir / (cfg.output.csv or f"{result.name}.csv"), result.records)
    for stem, (header, rows) in result.tables.items():
        write_csv(outdir / f"{stem}.csv", header, rows)
    for c in result.checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status} {c.name}: {c.violations}/{c.cases} violations, worst margin {c.worst_margin:.3g}")
    for line in result.report:
        print(line)
    return EXIT_OK if result.ok else EXIT_CHECK


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    sys.exit(run())
