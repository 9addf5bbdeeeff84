"""``sim`` command line: run, sweep, oracle-check, replay."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from hichord.errors import ConfigError, InvalidArgument
from hichord.harness import (
    ExperimentConfig,
    execute,
    load_configs,
    oracle_check,
    render_csv,
    render_log,
    replay,
    sweep,
)

EXIT_OK, EXIT_CONFIG, EXIT_MISMATCH = 0, 1, 2


def _seed(value: str | None) -> int | None:
    if value is None:
        value = os.environ.get("SIM_SEED")
        if value is None:
            return None
    try:
        seed = int(value, 0)
    except ValueError:
        raise ConfigError(f"seed must be an unsigned integer, got {value!r}") from None
    if not 0 <= seed < 1 << 64:
        raise ConfigError(f"seed {seed} is outside the u64 range")
    return seed


def _cmd_run(args) -> int:
    config = ExperimentConfig.from_file(args.config, seed=_seed(args.seed))
    result = execute(config)
    text = render_csv([result.report])
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.log:
        Path(args.log).write_text(render_log(config, result.log))
    print(result.report.complexity_note(), file=sys.stderr)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    configs = load_configs(args.configs, seed=_seed(args.seed))
    reports = sweep(configs, args.out, jobs=args.jobs)
    for r in reports:
        print(f"{r.model} N={r.N}: {r.complexity_note()}", file=sys.stderr)
    return EXIT_OK


def _cmd_oracle(args) -> int:
    if args.samples < 0:
        raise ConfigError("--samples must be non-negative")
    config = ExperimentConfig.from_file(args.config, seed=_seed(args.seed))
    if args.exhaustive and config.m > 8:
        raise ConfigError("exhaustive checking needs m <= 8")
    report = oracle_check(config, args.samples, exhaustive=args.exhaustive)
    for mm in report.mismatches[:20]:
        print(f"mismatch origin={mm.origin} key={mm.key_id}: {mm.reason}", file=sys.stderr)
        if mm.trace is not None:
            print(f"  trace: {mm.trace}", file=sys.stderr)
    print(f"checked {report.samples} lookups, {len(report.mismatches)} mismatches")
    return EXIT_OK if report.passed else EXIT_MISMATCH


def _cmd_replay(args) -> int:
    original, regenerated = replay(Path(args.log).read_text())
    for i, (a, b) in enumerate(zip(original, regenerated)):
        if a != b:
            print(f"divergence at event {i}:\n  logged:   {a}\n  replayed: {b}", file=sys.stderr)
            return EXIT_MISMATCH
    if len(original) != len(regenerated):
        print(f"logged {len(original)} events, replay produced {len(regenerated)}", file=sys.stderr)
        return EXIT_MISMATCH
    print(f"replayed {len(original)} events, identical")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment and print its CSV row")
    p.add_argument("--config", required=True)
    p.add_argument("--seed")
    p.add_argument("--out")
    p.add_argument("--log", help="also write the replayable event log here")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run every config and write one CSV")
    p.add_argument("--configs", required=True, help="directory of .conf files or one file with --- separators")
    p.add_argument("--out", required=True)
    p.add_argument("--seed")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("oracle-check", help="compare lookups against brute-force ground truth")
    p.add_argument("--config", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--exhaustive", action="store_true")
    p.add_argument("--seed")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("replay", help="re-execute an event log and compare")
    p.add_argument("--log", required=True)
    p.set_defaults(func=_cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidArgument, FileNotFoundError, IsADirectoryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
