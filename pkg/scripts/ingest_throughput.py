"""Ingest throughput on a synthetic three-week stream (Aug 23 to Sep 12).

    python3 scripts/ingest_throughput.py --per-term-daily 400
"""

from __future__ import annotations

import argparse
import tempfile
import time
from datetime import date
from pathlib import Path

from iliwatch.core import IliSeries
from iliwatch.ingest import CounterStore, ReplaySource, run_ingest, write_stream
from iliwatch.synth import TermRate, generate_corpus
from iliwatch.textnorm import TermLexicon

DATA = Path(__file__).resolve().parents[1] / "data" / "synthetic"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lexicon", type=Path, default=DATA / "lexicon.tsv")
    ap.add_argument("--per-term-daily", type=float, default=400.0, help="mean tweets per term per day")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    lexicon = TermLexicon.from_file(args.lexicon)
    season = IliSeries(date(2015, 8, 23), (0, 0, 0))
    corpus = generate_corpus(season, lexicon, [TermRate(args.per_term_daily, 0.0)] * len(lexicon), args.seed)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "stream.jsonl"
        n = write_stream(corpus.records, path)
        size = path.stat().st_size / 1e6
        print(f"{n} records, {size:.1f} MB, {corpus.records[0].timestamp.date()} .. {corpus.records[-1].timestamp.date()}")
        best = float("inf")
        for i in range(args.repeats):
            t0 = time.perf_counter()
            summary = run_ingest(ReplaySource(path), lexicon, CounterStore())
            dt = time.perf_counter() - t0
            best = min(best, dt)
            print(f"run {i + 1}: {dt:.2f}s  {summary.seen / dt:,.0f} records/s  ({summary})")
    print(f"best: {n / best:,.0f} records/s")


if __name__ == "__main__":
    main()
