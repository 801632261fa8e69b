"""Command line entry point: ``genid <subcommand> [options]``.

Exit codes: 0 success, 2 config error, 3 simulation diverged, 4 fit or
training failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import experiment as ex
from .errors import (
    ConfigError,
    GenIdError,
    NoEquilibriumError,
    RandomizationFailedError,
    SimulationDivergedError,
    StageError,
)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_FIT = 0, 2, 3, 4


def _kv(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--model", choices=["var", "wd-lstm", "ft-wd-lstm"])
    common.add_argument("--regime", choices=["regular", "randomized", "high-order-noise"])
    common.add_argument("--set", dest="overrides", action="append", type=_kv, default=[],
                        metavar="KEY=VALUE", help="override any config key; repeatable")
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="genid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="simulate train/test trajectories")
    for name, text in (("fit", "fit the selected model"),
                       ("evaluate", "score a fitted model on the test set")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--data", help="directory written by 'generate' (default: regenerate)")
    p = sub.add_parser("diagnose", parents=[common], help="lag maps, criterion curves, decay")
    p.add_argument("--max-lag", type=int, default=8)
    sub.add_parser("experiment", parents=[common], help="full generate/fit/evaluate pipeline")
    sub.add_parser("sweep", parents=[common], help="NRMSE over fault resistances")
    sub.add_parser("show-config", parents=[common], help="print the effective config")
    return parser


def config_from_args(args) -> ex.ExperimentConfig:
    overrides = {}
    for key, value in args.overrides:
        overrides[key] = ex._parse_value(value)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.model is not None:
        overrides["model"] = args.model.replace("-", "_")
    if args.regime is not None:
        overrides["regime"] = args.regime.replace("-", "_")
    if args.config:
        return ex.load_config(args.config, overrides)
    return ex.parse_config("", overrides)


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (SimulationDivergedError, NoEquilibriumError, RandomizationFailedError)):
        return EXIT_DIVERGED
    return EXIT_FIT


def _dispatch(args, cfg):
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    if args.command == "show-config":
        sys.stdout.write(ex.serialize_config(cfg))
        return None
    if args.command == "experiment":
        return ex.run_experiment(cfg, log=log)
    if args.command in ("generate", "fit", "evaluate"):
        return ex.run_stage(cfg, args.command, getattr(args, "data", None), log=log)
    if args.command == "diagnose":
        return ex.run_diagnostics(cfg, max_lag=args.max_lag)
    grid = ex.run_sweep(cfg)
    return {"resistances": grid.row_values, "nrmse": grid.values[:, 0].tolist(),
            "failures": grid.failures}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        result = _dispatch(args, cfg)
    except GenIdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    if result is not None and not args.quiet:
        doc = result if isinstance(result, dict) else {
            "out": str(cfg.out), "complete": result.complete, "results": result.results,
            "wall_times": result.wall_times}
        print(json.dumps(doc, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
