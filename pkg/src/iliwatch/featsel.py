"""Rank candidate terms by Pearson correlation with the weekly ILI series."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import IliSeries


class ZeroVarianceError(ValueError):
    pass


def pearson_r(x, y) -> float:
    """Sample Pearson correlation of two equal-length series."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"series must be 1-d and equal length, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ValueError("need at least 2 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVarianceError("series has zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class TermScore:
    term: str
    pearson_r: float
    n_weeks: int


@dataclass(frozen=True)
class Ranking:
    scores: list[TermScore]
    skipped: list[str]


def rank_terms(weekly_term_counts, ili: IliSeries | np.ndarray, terms: list[str] | None = None) -> Ranking:
    """Score every column against ``ili``, highest r first.

    Columns with zero variance are left out and listed in ``skipped``. Ties
    keep column order.
    """
    counts = np.asarray(weekly_term_counts, dtype=float)
    y = ili.as_array() if isinstance(ili, IliSeries) else np.asarray(ili, dtype=float)
    if counts.ndim != 2:
        raise ValueError("weekly_term_counts must be a weeks x terms matrix")
    if counts.shape[0] != len(y):
        raise ValueError(f"week count mismatch: counts have {counts.shape[0]} weeks, ILI has {len(y)}")
    if len(y) < 2:
        raise ValueError("need at least 2 weeks")
    if terms is None:
        terms = [str(j) for j in range(counts.shape[1])]
    if len(terms) != counts.shape[1]:
        raise ValueError("one label per column required")
    scored = []
    skipped = []
    for j, term in enumerate(terms):
        try:
            r = pearson_r(counts[:, j], y)
        except ZeroVarianceError:
            skipped.append(term)
            continue
        scored.append((j, TermScore(term, r, len(y))))
    scored.sort(key=lambda item: (-item[1].pearson_r, item[0]))
    return Ranking([s for _, s in scored], skipped)


def select_terms(ranked: Ranking | list[TermScore], k: int = 10) -> list[str]:
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = ranked.scores if isinstance(ranked, Ranking) else ranked
    return [s.term for s in scores[:k]]


def write_ranking_csv(ranking: Ranking, path: str | Path, k: int | None = None) -> None:
    """``term,pearson_r,n_weeks`` rows, then a ``# skipped`` section."""
    scores = ranking.scores if k is None else ranking.scores[:k]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "pearson_r", "n_weeks"])
        for s in scores:
            w.writerow([s.term, repr(s.pearson_r), s.n_weeks])
        fh.write("# skipped\n")
        for term in ranking.skipped:
            fh.write(f"{term}\n")


def read_ranking_csv(path: str | Path) -> Ranking:
    scores, skipped = [], []
    in_skipped = False
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "term,pearson_r,n_weeks":
            raise ValueError(f"{path}: expected header 'term,pearson_r,n_weeks'")
        for line in fh:
            line = line.rstrip("\n")
            if line == "# skipped":
                in_skipped = True
            elif in_skipped:
                if line:
                    skipped.append(line)
            elif line:
                term, r, n = next(csv.reader([line]))
                scores.append(TermScore(term, float(r), int(n)))
    return Ranking(scores, skipped)
