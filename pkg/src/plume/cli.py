"""Command-line entry point.

Verbs: ``list-experiments``, ``generate`` (synthetic measurements),
``run`` (experiment, CSV output) and ``report`` (experiment, CSV output
plus rendered figures).  Exit codes: 0 success, 1 assertion failure,
2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import (EXPERIMENT_NAMES, ConfigError, ExperimentConfig,
                          default_config, generate_measurements,
                          run_experiment)


def _load_config(args) -> ExperimentConfig:
    if args.config is not None:
        with open(args.config) as fh:
            cfg = ExperimentConfig.from_dict(json.load(fh))
    else:
        cfg = default_config(args.experiment)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    cfg.validate()
    return cfg


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("experiment", nargs="?", default=None,
                        help="named experiment (see list-experiments)")
    parser.add_argument("--config", help="JSON config file overriding the "
                        "named defaults")
    parser.add_argument("--seed", type=int, help="override the noise seed")
    parser.add_argument("--out", help="output directory (default: results)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plume",
        description="Boundary pollutant-source identification experiments")
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("list-experiments", help="print the experiment registry")
    for verb, text in (("generate", "write synthetic measurement data"),
                       ("run", "run an experiment, write CSV tables"),
                       ("report", "run an experiment, write CSV and figures")):
        p = sub.add_parser(verb, help=text)
        _add_common(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "list-experiments":
        for name in EXPERIMENT_NAMES:
            print(name)
        return 0

    if args.experiment is None and args.config is None:
        print("error: an experiment name or --config is required",
              file=sys.stderr)
        return 2
    try:
        cfg = _load_config(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    from .report import write_bundle, write_measurements

    out = Path(cfg.output_dir)
    if args.verb == "generate":
        meas = generate_measurements(cfg)
        target = out / cfg.name
        target.mkdir(parents=True, exist_ok=True)
        write_measurements(meas.clean, target / "measurements_clean.csv")
        write_measurements(meas.noisy, target / "measurements_noisy.csv")
        print(f"wrote measurements to {target}")
        return 0

    try:
        bundle = run_experiment(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    target = write_bundle(bundle, out, figures=(args.verb == "report"))
    print(f"wrote bundle to {target}")
    if bundle.failures:
        for failure in bundle.failures:
            print(f"check failed: {failure}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
