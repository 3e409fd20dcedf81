"""Command line entry point: ``c3rl {run,paired,sweep,unweighted}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import CapabilityError, ConfigError, DataError, NumericError
from .runner import (
    emit_results,
    parse_config,
    run_experiment,
    run_lambda_sweep,
    run_paired,
    run_unweighted,
    sweep_summary,
    sweep_trend,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

_SUBCOMMAND_MODE = {"run": None, "paired": "paired", "sweep": "lambda_sweep", "unweighted": "unweighted"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="c3rl", description="Baseline vs siamese-contrastive forecasting runs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "run": "single run (mode baseline or c3rl, default c3rl)",
        "paired": "baseline and C3RL with a shared seed, plus a delta row",
        "sweep": "one C3RL run per lambda_simsia grid point",
        "unweighted": "tuned weights vs weights (1, 1)",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--dataset", metavar="PATH")
        p.add_argument("--model", metavar="KIND")
        p.add_argument("--horizon", type=int)
        p.add_argument("--lookback", type=int)
        p.add_argument("--lambda-simsia", type=float, dest="lambda_simsia")
        p.add_argument("--lambda-pred", type=float, dest="lambda_pred")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int, dest="batch_size")
        if name == "run":
            p.add_argument("--mode", choices=("baseline", "c3rl"), default=None)
        if name == "sweep":
            p.add_argument("--grid", help="comma-separated lambda_simsia values")
    return parser


def _execute(args) -> dict:
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    mode = _SUBCOMMAND_MODE[args.command]
    if mode is not None:
        overrides["mode"] = mode
    elif overrides.get("mode") is None:
        overrides["mode"] = "c3rl"
    config = parse_config(args.config, overrides)
    out = config.out or "results"
    summaries = {}
    if args.command == "run":
        results = [run_experiment(config)]
    elif args.command == "paired":
        base, c3, delta = run_paired(config)
        results, summaries["deltas"] = [base, c3], [delta]
    elif args.command == "sweep":
        results = run_lambda_sweep(config)
        summaries["sweep"] = sweep_summary(results)
        summaries["sweep_trend"] = [sweep_trend(results)]
    else:
        tuned, flat, row = run_unweighted(config)
        results, summaries["unweighted"] = [tuned, flat], [row]
    paths = emit_results(results, out, summaries)
    return {
        "out": str(out),
        "runs": [{"arm": r.arm, "test_mse": r.test_mse, "test_mae": r.test_mae} for r in results],
        "files": sorted(str(p) for p in paths.values() if not isinstance(p, list)),
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        summary = _execute(args)
    except (ConfigError, CapabilityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(summary, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
