import json
import shutil
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from iliwatch import core, fluhmm
from iliwatch.cli import build_parser, main
from iliwatch.pipeline import StageError, run_pipeline
from iliwatch.regress import LinearModel

NS = "{http://www.w3.org/2000/svg}"
GOLDEN = ["counters.csv", "model.json", "daily_scores.csv", "weekly.csv", "fit.json", "plot.svg"]


@pytest.fixture(scope="module")
def golden(tmp_path_factory, request):
    data = Path(request.config.rootpath) / "data" / "synthetic"
    runs = []
    for i in range(2):
        out = tmp_path_factory.mktemp(f"golden{i}")
        assert main(["pipeline", str(data / "pipeline.json"), "--workdir", str(out)]) == 0
        runs.append(out)
    return runs


def test_golden_run_writes_every_artifact(golden):
    for name in GOLDEN:
        assert (golden[0] / name).stat().st_size > 0, name


def test_golden_run_is_bitwise_deterministic(golden):
    a, b = golden
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_golden_plot_stacks_sum_to_100(golden):
    root = ET.parse(golden[0] / "plot.svg").getroot()
    groups = [g for g in root.iter(NS + "g") if g.get("class") == "prob-stack"]
    weeks = len(core.read_series_csv(golden[0] / "weekly.csv"))
    assert len(groups) == weeks
    for g in groups:
        assert sum(int(t.text) for t in g.findall(NS + "text")) == 100


def test_golden_fit_finds_planted_onset(golden, data_dir):
    doc = fluhmm.read_fit_json(golden[0] / "fit.json")
    assert doc["converged"]
    season = json.loads((data_dir / "season.json").read_text())
    phases = [max(range(5), key=lambda k: row[k]) for row in doc["phase_probs"]]
    onset = next(i for i, k in enumerate(phases) if k > 0)
    assert abs(onset - season["boundaries"][0]) <= 1


def test_verbose_prints_stage_summaries(tmp_path, data_dir, capsys):
    assert main(["--verbose", "pipeline", str(data_dir / "pipeline.json"), "--workdir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    for stage in ("ingest", "select", "train", "estimate", "aggregate", "fit", "plot"):
        assert f"[{stage}]" in out


def _config_copy(tmp_path, data_dir, **overrides) -> Path:
    cfg = json.loads((data_dir / "pipeline.json").read_text(encoding="utf-8"))
    for name in ("lexicon.tsv", "labels.tsv"):
        shutil.copy(data_dir / name, tmp_path / name)
    cfg.update(overrides)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg, ensure_ascii=False), encoding="utf-8")
    return path


def test_missing_lexicon_names_ingest_stage(tmp_path, data_dir, capsys):
    cfg = _config_copy(tmp_path, data_dir, lexicon="nowhere.tsv")
    assert main(["pipeline", str(cfg)]) != 0
    err = capsys.readouterr().err
    assert "ingest" in err and "nowhere.tsv" in err
    with pytest.raises(StageError) as info:
        run_pipeline(cfg)
    assert info.value.stage.startswith("ingest")


def test_unparseable_config_names_config_stage(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json", encoding="utf-8")
    assert main(["pipeline", str(cfg)]) != 0
    assert "config" in capsys.readouterr().err


def test_bad_fit_section_names_fit_stage(tmp_path, data_dir, capsys):
    cfg = _config_copy(tmp_path, data_dir, fit={"chains": 1})
    assert main(["pipeline", str(cfg)]) != 0
    assert "'fit'" in capsys.readouterr().err


def test_global_flags_accepted_after_subcommand():
    args = build_parser().parse_args(["fit", "--ili", "a.csv", "--out", "b.json", "--seed", "9", "--verbose"])
    assert args.seed == 9 and args.verbose
    args = build_parser().parse_args(["--seed", "4", "fit", "--ili", "a.csv", "--out", "b.json"])
    assert args.seed == 4 and not args.verbose


def test_subcommands_chain_reproduces_pipeline(tmp_path, data_dir, golden):
    """Running the stages one by one gives the same artifacts as the pipeline's live half."""
    gold = golden[0]
    d = tmp_path
    lex = str(data_dir / "lexicon.tsv")
    cfg = json.loads((data_dir / "pipeline.json").read_text(encoding="utf-8"))
    live = cfg["simulate"]["live"]
    (d / "season.json").write_text(json.dumps(live["season"]))
    start = live["season"]["season_start"]

    steps = [
        ["--seed", str(live["seed"]), "simulate", "--season", str(d / "season.json"), "--ili-out", str(d / "ili.csv"),
         "--lexicon", lex, "--rates", str(data_dir / "rates.json"), "--stream-out", str(d / "stream.jsonl")],
        ["ingest", "--stream", str(d / "stream.jsonl"), "--lexicon", lex, "--out", str(d / "counters.csv")],
        ["estimate", "--model", str(gold / "model.json"), "--counts", str(d / "counters.csv"), "--out",
         str(d / "daily_scores.csv"), "--start", start],
        ["aggregate", "--daily", str(d / "daily_scores.csv"), "--season-start", start, "--out", str(d / "weekly.csv")],
        ["fit", "--ili", str(d / "weekly.csv"), "--out", str(d / "fit.json"), "--seed", str(cfg["seed"])],
        ["plot", "--fit", str(d / "fit.json"), "--ili", str(d / "weekly.csv"), "--title", cfg["title"],
         "--out", str(d / "plot.svg")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    assert (d / "stream.jsonl").read_bytes() == (gold / "live_stream.jsonl").read_bytes()
    for name in ("counters.csv", "daily_scores.csv", "weekly.csv", "fit.json", "plot.svg"):
        assert (d / name).read_bytes() == (gold / name).read_bytes(), name


def test_select_and_train_subcommands(tmp_path, golden):
    gold = golden[0]
    sel, feats, model = tmp_path / "selected.csv", tmp_path / "features.csv", tmp_path / "model.json"
    assert main([
        "select", "--counts", str(gold / "train_counters.csv"), "--ili", str(gold / "train_ili.csv"),
        "--k", "10", "--season-start", "2013-06-03", "--out", str(sel), "--features-out", str(feats),
    ]) == 0
    assert sel.read_bytes() == (gold / "selected.csv").read_bytes()
    assert main(["train", "--features", str(feats), "--ili", str(gold / "train_ili.csv"), "--out", str(model)]) == 0
    assert LinearModel.load(model) == LinearModel.load(gold / "model.json")


def test_counts_plot_subcommand(tmp_path, golden, data_dir):
    out = tmp_path / "counts.svg"
    argv = ["plot", "--counts", str(golden[0] / "counters.csv"), "--labels", str(data_dir / "labels.tsv"), "--out", str(out)]
    assert main(argv) == 0
    ET.parse(out)


def test_plot_without_inputs_fails_cleanly(tmp_path, capsys):
    assert main(["plot", "--out", str(tmp_path / "x.svg")]) == 1
    assert "plot" in capsys.readouterr().err


def test_missing_input_file_fails_cleanly(tmp_path, capsys):
    assert main(["fit", "--ili", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "f.json")]) == 1
    assert "absent.csv" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "iliwatch", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("ingest", "select", "train", "estimate", "aggregate", "fit", "plot", "simulate", "pipeline"):
        assert cmd in proc.stdout
