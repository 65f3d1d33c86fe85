"""Command line entry point: ``llginv <mode> [--config FILE | --preset NAME] ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .aao import DivergenceError
from .config import MODES, ConfigError, ExperimentConfig
from .march import NewtonError
from .presets import preset_by_name

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llginv", description=__doc__)
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="experiment config file")
        src.add_argument("--preset", choices=("test1", "test2", "test3", "physical"))
        p.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--max-iterations", type=int, help="iteration budget override")
        p.add_argument("--noise", type=float, help="relative noise level override")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        if cfg.mode != args.mode:
            cfg = replace(cfg, mode=args.mode)
    else:
        cfg = preset_by_name(args.preset, args.mode)
    overrides = {k: v for k, v in (("seed", args.seed), ("out", args.out),
                                   ("max_iterations", args.max_iterations),
                                   ("noise_level", args.noise)) if v is not None}
    return replace(cfg, **overrides).validate()


def _fail(code: int, exc: Exception) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args)
    except (ConfigError, OSError) as exc:
        return _fail(EXIT_CONFIG, exc)
    from .experiment import run_experiment

    try:
        summary = run_experiment(cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (DivergenceError, NewtonError) as exc:
        return _fail(EXIT_DIVERGED, exc)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
