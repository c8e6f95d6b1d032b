"""``flowsmooth`` command line.

    flowsmooth run --config CONFIG [--out DIR] [--seed U64]
    flowsmooth validate --config CONFIG

Exit codes: 0 success, 2 config error, 3 every run hit a numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .experiment import EXIT_CONFIG, EXIT_OK, ConfigError, load_config, run_experiment
from .rng import U64_MAX


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowsmooth", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write CSV reports")
    run.add_argument("--config", required=True, help="path to the JSON config")
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.add_argument("--seed", type=_u64, help="RNG seed (overrides seed)")

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("--config", required=True, help="path to the JSON config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate":
        print(f"{args.config}: ok ({len(config.samplers)} samplers, "
              f"{config.ensemble_size} members, {config.n_steps} steps)")
        return EXIT_OK

    config = config.with_overrides(seed=args.seed, output_dir=args.out)
    result = run_experiment(config)
    for row in result.summary_rows:
        err = row["endpoint_error_mean"]
        err = "n/a" if err is None else f"{err:.6g}"
        status = f"  FAILED {row['n_failed']}/{row['ensemble_size']}" if row["n_failed"] else ""
        print(f"{row['sampler']:<16} endpoint_error={err:<12} calls={row['total_calls']}{status}")
    print(f"wrote {result.summary_path}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
