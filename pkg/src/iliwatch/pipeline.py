"""File-to-file pipeline stages and the config-driven end-to-end runner.

Each stage reads and writes the documented artifact formats, so the CLI
subcommands and :func:`run_pipeline` share one implementation.
"""

from __future__ import annotations

import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from . import core, featsel, fluhmm, ingest, plot, regress, synth
from .textnorm import TermLexicon, normalize

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def stage_ingest(stream: Path, lexicon: Path, out: Path) -> ingest.IngestSummary:
    lex = TermLexicon.from_file(lexicon)
    store = ingest.CounterStore()
    summary = ingest.run_ingest(ingest.ReplaySource(stream), lex, store)
    core.write_counters_csv(store.snapshot(), out)
    return summary


def stage_select(
    counts: Path,
    ili: Path,
    k: int,
    out: Path,
    features_out: Path | None = None,
    season_start: date | None = None,
) -> list[str]:
    """Rank every counted term against the ILI series and keep the top ``k``."""
    counters = core.read_counters_csv(counts)
    series = core.read_series_csv(ili)
    days = counters.days()
    if not days:
        raise ValueError(f"{counts}: no counts")
    start = season_start or days[0]
    terms = counters.terms()
    weekly = core.weekly_term_counts(counters, terms, start, n_weeks=len(series))
    ranking = featsel.rank_terms(weekly, series.values, terms)
    selected = featsel.select_terms(ranking, k)
    featsel.write_ranking_csv(ranking, out, k)
    if features_out is not None:
        cols = [terms.index(t) for t in selected]
        regress.write_features_csv(weekly[:, cols], selected, features_out)
    return selected


def stage_train(features: Path, ili: Path, out: Path) -> regress.LinearModel:
    X, terms = regress.read_features_csv(features)
    series = core.read_series_csv(ili)
    model = regress.fit_ols(X, series.as_array(), terms)
    model.save(out)
    return model


def stage_estimate(
    model: Path, counts: Path, out: Path, day_range: tuple[date, date] | None = None
) -> dict[date, float]:
    m = regress.LinearModel.load(model)
    scores = regress.estimate_daily(m, core.read_counters_csv(counts), day_range)
    core.write_daily_scores_csv(scores, out)
    return scores


def stage_aggregate(daily: Path, season_start: date | None, out: Path) -> core.IliSeries:
    scores = core.read_daily_scores_csv(daily)
    if season_start is None:
        if not scores:
            raise ValueError(f"{daily}: no daily scores")
        season_start = min(scores)
    series = core.aggregate_weekly(scores, season_start)
    core.write_series_csv(series, out)
    return series


def stage_fit(ili: Path, config: fluhmm.SamplerConfig, out: Path) -> fluhmm.FitResult:
    series = core.read_series_csv(ili)
    result = fluhmm.fit(series, config)
    fluhmm.write_fit_json(result, out, series)
    return result


def stage_plot(fit_path: Path, ili: Path, out: Path, title: str = "") -> None:
    doc = fluhmm.read_fit_json(fit_path)
    series = core.read_series_csv(ili)
    plot.plot_fit(doc["phase_probs"], series, out, title=title)


def stage_simulate(
    season: synth.SeasonSpec,
    ili_out: Path,
    lexicon: Path | None = None,
    rates: dict | None = None,
    stream_out: Path | None = None,
    seed: int = 0,
) -> synth.Corpus | None:
    series, _ = synth.generate_season(season)
    core.write_series_csv(series, ili_out)
    if stream_out is None:
        return None
    if lexicon is None:
        raise ValueError("a lexicon is required to generate a stream")
    lex = TermLexicon.from_file(lexicon)
    term_rates = {normalize(k): synth.TermRate(**r) for k, r in (rates or {}).items()}
    corpus = synth.generate_corpus(series, lex, term_rates, seed)
    ingest.write_stream(corpus.records, stream_out)
    return corpus


# -- end-to-end runner ---------------------------------------------------------


@dataclass
class PipelineRun:
    artifacts: dict[str, Path] = field(default_factory=dict)
    summaries: dict[str, str] = field(default_factory=dict)


@contextmanager
def _stage(name: str, run: PipelineRun, verbose: bool):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    if verbose and name in run.summaries:
        print(f"[{name}] {run.summaries[name]}")


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    return path


def run_pipeline(config_path: str | Path, verbose: bool = False, workdir: str | Path | None = None) -> PipelineRun:
    """Execute every stage described by a JSON run-config.

    Relative paths in the config resolve against the config file's directory.
    Any failure is re-raised as :class:`StageError` naming the stage.
    """
    config_path = Path(config_path)
    run = PipelineRun()
    with _stage("config", run, verbose):
        cfg = json.loads(config_path.read_text(encoding="utf-8"))
        base = config_path.parent
        out = Path(workdir) if workdir is not None else base / cfg.get("workdir", "out")
        out.mkdir(parents=True, exist_ok=True)
        seed = int(cfg.get("seed", 0))
        lexicon = base / cfg["lexicon"]
        train = cfg.get("train", {})
        live = cfg.get("live", {})
        sim = cfg.get("simulate")

    # the lexicon belongs to ingestion; check it before anything consumes it
    with _stage("ingest-lexicon", run, verbose):
        lex = TermLexicon.from_file(_require(lexicon))
        run.summaries["ingest-lexicon"] = f"{len(lex)} terms from {lexicon.name}"

    if sim is not None:
        with _stage("simulate", run, verbose):
            for role, section in (("train", sim["train"]), ("live", sim["live"])):
                spec = synth.SeasonSpec(**section["season"])
                ili_path = out / f"{role}_ili.csv"
                stream_path = out / f"{role}_stream.jsonl"
                corpus = stage_simulate(
                    spec, ili_path, lexicon, section.get("rates", sim.get("rates")), stream_path,
                    seed=int(section.get("seed", seed)),
                )
                run.artifacts[f"{role}_ili"] = ili_path
                run.artifacts[f"{role}_stream"] = stream_path
                if role == "train":
                    train = {"stream": stream_path, "ili": ili_path, "season_start": spec.season_start.isoformat()}
                else:
                    live = {"stream": stream_path, "season_start": spec.season_start.isoformat(), **live}
                run.summaries["simulate"] = (
                    run.summaries.get("simulate", "") + f"{role}: {len(corpus.records)} tweets, {spec.n_weeks} weeks; "
                )
    else:
        train = {k: (base / v if k in ("stream", "ili") else v) for k, v in train.items()}
        live = {k: (base / v if k == "stream" else v) for k, v in live.items()}

    with _stage("ingest-train", run, verbose):
        path = out / "train_counters.csv"
        s = stage_ingest(_require(Path(train["stream"])), _require(lexicon), path)
        run.artifacts["train_counters"] = path
        run.summaries["ingest-train"] = str(s)

    with _stage("select", run, verbose):
        sel_cfg = cfg.get("select", {})
        path, feats = out / "selected.csv", out / "train_features.csv"
        start = date.fromisoformat(train["season_start"]) if "season_start" in train else None
        selected = stage_select(
            run.artifacts["train_counters"], _require(Path(train["ili"])), int(sel_cfg.get("k", 10)),
            path, feats, start,
        )
        run.artifacts["selected"] = path
        run.artifacts["train_features"] = feats
        run.summaries["select"] = f"selected {len(selected)} terms: {', '.join(selected)}"

    with _stage("train", run, verbose):
        path = out / "model.json"
        model = stage_train(run.artifacts["train_features"], Path(train["ili"]), path)
        run.artifacts["model"] = path
        run.summaries["train"] = f"n={model.n_samples} rss={model.rss:.4g} intercept={model.intercept:.4g}"

    with _stage("ingest", run, verbose):
        path = out / "counters.csv"
        s = stage_ingest(_require(Path(live["stream"])), _require(lexicon), path)
        run.artifacts["counters"] = path
        run.summaries["ingest"] = str(s)

    live_start = date.fromisoformat(live["season_start"]) if "season_start" in live else None
    with _stage("estimate", run, verbose):
        path = out / "daily_scores.csv"
        counters = core.read_counters_csv(run.artifacts["counters"])
        days = counters.days()
        first = live_start or (days[0] if days else None)
        last = date.fromisoformat(live["end"]) if "end" in live else (days[-1] if days else None)
        if first is None or last is None:
            raise ValueError("live stream produced no counts and no date range is configured")
        scores = stage_estimate(run.artifacts["model"], run.artifacts["counters"], path, (first, last))
        run.artifacts["daily_scores"] = path
        run.summaries["estimate"] = f"{len(scores)} days, total score {sum(scores.values()):.4g}"

    with _stage("aggregate", run, verbose):
        path = out / "weekly.csv"
        series = stage_aggregate(run.artifacts["daily_scores"], live_start, path)
        run.artifacts["weekly"] = path
        run.summaries["aggregate"] = f"{len(series)} weeks: {list(series.values)}"

    with _stage("fit", run, verbose):
        fit_cfg = dict(cfg.get("fit", {}))
        fit_cfg.setdefault("seed", seed)
        path = out / "fit.json"
        result = stage_fit(run.artifacts["weekly"], fluhmm.SamplerConfig.from_dict(fit_cfg), path)
        run.artifacts["fit"] = path
        run.summaries["fit"] = (
            f"converged={result.converged} iterations={result.total_iterations} "
            f"max psrf={max(result.psrf.values()):.4f} onset week={result.growth_onset()}"
        )

    with _stage("plot", run, verbose):
        path = out / "plot.svg"
        stage_plot(run.artifacts["fit"], run.artifacts["weekly"], path, title=cfg.get("title", ""))
        run.artifacts["plot"] = path
        counts_path = out / "counts.svg"
        labels = plot.read_label_map(base / cfg["labels"]) if cfg.get("labels") else None
        sel = featsel.read_ranking_csv(run.artifacts["selected"])
        plot.plot_counts(
            core.read_counters_csv(run.artifacts["counters"]), counts_path,
            terms=[s.term for s in sel.scores], labels=labels,
        )
        run.artifacts["counts_plot"] = counts_path
        run.summaries["plot"] = f"wrote {path.name}, {counts_path.name}"
    return run
