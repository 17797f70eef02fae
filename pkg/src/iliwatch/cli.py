"""Command-line entry point: ``iliwatch <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path

from . import core, fluhmm, plot, synth
from .pipeline import (
    StageError,
    run_pipeline,
    stage_aggregate,
    stage_estimate,
    stage_fit,
    stage_ingest,
    stage_plot,
    stage_select,
    stage_simulate,
    stage_train,
)


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="seed for every random draw")
    parser.add_argument(
        "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False,
        help="print per-stage summaries",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iliwatch", description="Tweet-based ILI phase surveillance")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="count lexicon terms in a replayed stream")
    p.add_argument("--stream", type=Path, required=True)
    p.add_argument("--lexicon", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("select", parents=[common], help="rank terms by Pearson r against weekly ILI")
    p.add_argument("--counts", type=Path, required=True)
    p.add_argument("--ili", type=Path, required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--season-start", type=date.fromisoformat, default=None)
    p.add_argument("--out", type=Path, default=Path("selected.csv"))
    p.add_argument("--features-out", type=Path, default=None, help="weekly feature matrix of the kept terms")

    p = sub.add_parser("train", parents=[common], help="fit the linear ILI model")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--ili", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("estimate", parents=[common], help="daily ILI estimates from counters")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--counts", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--start", type=date.fromisoformat, default=None)
    p.add_argument("--end", type=date.fromisoformat, default=None)

    p = sub.add_parser("aggregate", parents=[common], help="sum daily scores into weeks")
    p.add_argument("--daily", type=Path, required=True)
    p.add_argument("--season-start", type=date.fromisoformat, default=None)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("fit", parents=[common], help="fit the five-phase HMM to a weekly series")
    p.add_argument("--ili", type=Path, required=True)
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--initial-iterations", type=int, default=5000)
    p.add_argument("--increment", type=int, default=5000)
    p.add_argument("--max-iterations", type=int, default=50000)
    p.add_argument("--psrf-threshold", type=float, default=1.1)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("plot", parents=[common], help="SVG of a fit, or of daily term counts")
    p.add_argument("--fit", type=Path)
    p.add_argument("--ili", type=Path)
    p.add_argument("--counts", type=Path, help="plot daily counters instead of a fit")
    p.add_argument("--labels", type=Path, help="term<TAB>label legend map")
    p.add_argument("--title", default="")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("simulate", parents=[common], help="synthetic season and tweet stream")
    p.add_argument("--season", type=Path, required=True, help="JSON season spec")
    p.add_argument("--ili-out", type=Path, required=True)
    p.add_argument("--lexicon", type=Path)
    p.add_argument("--rates", type=Path, help='JSON {"term": {"base": b, "slope": s}}')
    p.add_argument("--stream-out", type=Path)

    p = sub.add_parser("pipeline", parents=[common], help="run every stage from a JSON run-config")
    p.add_argument("config", type=Path)
    p.add_argument("--workdir", type=Path, default=None)
    return parser


def _run(args) -> None:
    seed = args.seed if args.seed is not None else 0
    cmd = args.command
    if cmd == "ingest":
        summary = stage_ingest(args.stream, args.lexicon, args.out)
        print(summary)
    elif cmd == "select":
        selected = stage_select(args.counts, args.ili, args.k, args.out, args.features_out, args.season_start)
        if args.verbose:
            print("selected:", ", ".join(selected))
    elif cmd == "train":
        model = stage_train(args.features, args.ili, args.out)
        if args.verbose:
            print(f"n={model.n_samples} rss={model.rss:.6g}")
    elif cmd == "estimate":
        day_range = None
        if args.start or args.end:
            days = core.read_counters_csv(args.counts).days()
            day_range = (args.start or days[0], args.end or days[-1])
        stage_estimate(args.model, args.counts, args.out, day_range)
    elif cmd == "aggregate":
        series = stage_aggregate(args.daily, args.season_start, args.out)
        if args.verbose:
            print(f"{len(series)} weeks")
    elif cmd == "fit":
        config = fluhmm.SamplerConfig(
            chains=args.chains,
            initial_iterations=args.initial_iterations,
            increment=args.increment,
            max_iterations=args.max_iterations,
            psrf_threshold=args.psrf_threshold,
            seed=seed,
        )
        result = stage_fit(args.ili, config, args.out)
        if args.verbose or not result.converged:
            print(
                f"converged={result.converged} iterations={result.total_iterations} "
                f"psrf={json.dumps({k: round(v, 4) for k, v in result.psrf.items()})}"
            )
    elif cmd == "plot":
        if args.counts is not None:
            labels = plot.read_label_map(args.labels) if args.labels else None
            plot.plot_counts(core.read_counters_csv(args.counts), args.out, labels=labels)
        else:
            if args.fit is None or args.ili is None:
                raise ValueError("plot needs --fit and --ili (or --counts)")
            stage_plot(args.fit, args.ili, args.out, args.title)
    elif cmd == "simulate":
        spec = synth.SeasonSpec.from_file(args.season)
        rates = json.loads(args.rates.read_text(encoding="utf-8")) if args.rates else None
        stage_simulate(spec, args.ili_out, args.lexicon, rates, args.stream_out, seed)
    elif cmd == "pipeline":
        run = run_pipeline(args.config, verbose=args.verbose, workdir=args.workdir)
        if args.verbose:
            for name, path in run.artifacts.items():
                print(f"{name}: {path}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        _run(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
