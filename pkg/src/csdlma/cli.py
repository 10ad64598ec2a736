"""Command-line entry point: ``csdlma run``, ``csdlma frontier``, ``csdlma benchmark``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .oracle import BenchmarkScenario, benchmark_table


def _seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(s) for s in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def _scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("scenario", help="scenario file (INI)")
    p.add_argument("--alpha", type=float, help="override the fairness exponent")
    p.add_argument("--seeds", type=_seeds, help="comma-separated seed list")
    p.add_argument("--steps", type=int, help="agent time steps per run")
    p.add_argument("--arch", choices=("recurrent", "feedforward"), help="Q-network variant")
    p.add_argument("--window", type=int, default=10_000, help="tail window for summaries, in steps")
    p.add_argument("--workers", type=int, default=1, help="seeds to run in parallel processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csdlma", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train on a scenario and write results")
    _scenario_args(run)
    run.add_argument("--out", default="results", help="output directory")
    run.add_argument("--format", choices=("csv", "json", "both"), default="both")

    front = sub.add_parser("frontier", help="learned vs p-CSMA throughput pairs against one other node")
    _scenario_args(front)
    front.add_argument("--alphas", type=_floats, default=[0, 1, 2, 5, 10, 50])
    front.add_argument("--ps", type=_floats, default=[round(0.05 * k, 2) for k in range(1, 11)])
    front.add_argument("--minislots", type=int, default=1_000_000, help="simulated length of each p-CSMA run")
    front.add_argument("--out", default="frontier.csv", help="output CSV file")

    sub.add_parser("benchmark", help="print the model-aware reference throughputs")
    return parser


def _load(args) -> harness.ScenarioConfig:
    config = harness.load_config(args.scenario)
    changes = {}
    if args.alpha is not None:
        changes["alpha"] = args.alpha
    if args.seeds is not None:
        changes["seeds"] = args.seeds
    if args.steps is not None:
        changes["steps"] = args.steps
    if args.arch is not None:
        changes["hyper"] = {**config.hyper, "variant": args.arch}
    config = config.with_changes(**changes) if changes else config
    if args.window is not None and not 0 < args.window:
        raise harness.ConfigError("--window must be positive")
    return config


def _window(config, window):
    return min(window, config.steps) if config.steps else None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "benchmark":
            print(json.dumps(benchmark_table(BenchmarkScenario()), indent=2))
            return 0
        config = _load(args)
        window = _window(config, args.window)
        if args.command == "run":
            records = harness.run_experiment(config, workers=args.workers)
            for path in harness.emit(records, args.out, args.format, config, window):
                print(path)
            if records and window:
                for name, stats in harness.summarize(records, window).items():
                    print(f"{name}: {stats.mean:.4f} +/- {stats.std:.4f}")
            return 0
        rows = harness.frontier_table(config, args.alphas, args.ps, args.minislots, window)
        print(harness.write_frontier(rows, args.out))
        return 0
    except harness.ConfigError as exc:
        print(f"csdlma: config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"csdlma: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
