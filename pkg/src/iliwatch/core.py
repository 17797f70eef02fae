"""Calendar-indexed series shared by every stage of the pipeline.

Days are plain :class:`datetime.date` values (UTC dates). Weeks are fixed
7-day blocks counted from the first day of the surveillance season, not ISO
weeks.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path
from types import MappingProxyType

import numpy as np

DayStamp = date


def parse_day(text: str) -> date:
    """Parse ``YYYY-MM-DD`` or a full ISO-8601 timestamp into a UTC date."""
    text = text.strip()
    if len(text) == 10:
        return date.fromisoformat(text)
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    stamp = datetime.fromisoformat(text)
    if stamp.tzinfo is not None:
        stamp = stamp.astimezone(timezone.utc)
    return stamp.date()


def week_index(day: date, season_start: date) -> int:
    """Week number of ``day`` counted from ``season_start`` (0-based)."""
    offset = (day - season_start).days
    if offset < 0:
        raise ValueError(f"date {day.isoformat()} precedes season start {season_start.isoformat()}")
    return offset // 7


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class IliSeries:
    """Weekly ILI scores; ``values[i]`` belongs to week ``i`` of the season."""

    season_start: date
    values: tuple[float, ...]

    def __post_init__(self):
        values = tuple(self.values)
        for i, v in enumerate(values):
            if not (v >= 0):
                raise ValueError(f"week {i}: score {v!r} is negative or NaN")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self) -> Iterator[float]:
        return iter(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def week_start(self, week: int) -> date:
        return date.fromordinal(self.season_start.toordinal() + 7 * week)


class DailyCounters(Mapping):
    """Read-only map ``(day, term) -> count``; absent keys count as zero.

    Terms are identified by their normalized base form (the lexicon's base term).
    """

    def __init__(self, counts: Mapping[tuple[date, str], int] | None = None):
        clean: dict[tuple[date, str], int] = {}
        for (day, term), n in (counts or {}).items():
            n = int(n)
            if n < 0:
                raise ValueError(f"negative count {n} for ({day}, {term})")
            if n:
                clean[(day, term)] = n
        self._counts = MappingProxyType(clean)

    def __getitem__(self, key):
        return self._counts.get(key, 0)

    def __iter__(self):
        return iter(self._counts)

    def __len__(self) -> int:
        return len(self._counts)

    def __contains__(self, key) -> bool:
        return key in self._counts

    def __eq__(self, other) -> bool:
        if isinstance(other, DailyCounters):
            return dict(self._counts) == dict(other._counts)
        return NotImplemented

    def __repr__(self) -> str:
        return f"DailyCounters({len(self)} nonzero cells, total={self.total()})"

    def total(self) -> int:
        return sum(self._counts.values())

    def days(self) -> list[date]:
        return sorted({d for d, _ in self._counts})

    def terms(self) -> list[str]:
        return sorted({t for _, t in self._counts})


def aggregate_weekly(daily_scores: Mapping[date, float], season_start: date) -> IliSeries:
    """Sum daily scores into 7-day blocks and round each week half-up.

    Weeks inside the covered range with no data get 0. An empty input gives an
    empty series.
    """
    sums: dict[int, float] = {}
    # calendar order keeps the floating-point summation order fixed
    for day in sorted(daily_scores):
        score = daily_scores[day]
        if day < season_start:
            raise ValueError(
                f"date {day.isoformat()} precedes season start {season_start.isoformat()}"
            )
        if not (score >= 0):
            raise ValueError(f"daily score on {day.isoformat()} is negative: {score!r}")
        w = week_index(day, season_start)
        sums[w] = sums.get(w, 0.0) + float(score)
    if not sums:
        return IliSeries(season_start, ())
    n_weeks = max(sums) + 1
    return IliSeries(season_start, tuple(round_half_up(sums.get(w, 0.0)) for w in range(n_weeks)))


def weekly_term_counts(
    counters: DailyCounters, terms: list[str], season_start: date, n_weeks: int | None = None
) -> np.ndarray:
    """Integer matrix weeks x terms of summed daily counts."""
    last = -1
    cells: dict[tuple[int, int], int] = {}
    col = {t: j for j, t in enumerate(terms)}
    for (day, term), n in counters.items():
        if term not in col:
            continue
        w = week_index(day, season_start)
        last = max(last, w)
        cells[(w, col[term])] = cells.get((w, col[term]), 0) + n
    if n_weeks is None:
        n_weeks = last + 1
    out = np.zeros((n_weeks, len(terms)), dtype=np.int64)
    for (w, j), n in cells.items():
        if w < n_weeks:
            out[w, j] = n
    return out


# -- CSV formats ---------------------------------------------------------------


def write_series_csv(series: IliSeries, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["week", "score"])
        for i, v in enumerate(series.values):
            writer.writerow([i, _fmt_number(v)])


def read_series_csv(path: str | Path, season_start: date | None = None) -> IliSeries:
    """Read a ``week,score`` file. Weeks must be 0..n-1 in order."""
    values = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:2]] != ["week", "score"]:
            raise ValueError(f"{path}: expected header 'week,score'")
        for lineno, row in enumerate(reader, start=2):
            week = int(row["week"])
            if week != len(values):
                raise ValueError(f"{path}:{lineno}: expected week {len(values)}, got {week}")
            values.append(_parse_number(row["score"]))
    return IliSeries(season_start or date(1970, 1, 1), tuple(values))


def write_counters_csv(counters: DailyCounters, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "term", "count"])
        for (day, term) in sorted(counters):
            writer.writerow([day.isoformat(), term, counters[(day, term)]])


def read_counters_csv(path: str | Path) -> DailyCounters:
    counts: dict[tuple[date, str], int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames[:3]) != ["date", "term", "count"]:
            raise ValueError(f"{path}: expected header 'date,term,count'")
        for row in reader:
            key = (date.fromisoformat(row["date"]), row["term"])
            counts[key] = counts.get(key, 0) + int(row["count"])
    return DailyCounters(counts)


def write_daily_scores_csv(scores: Mapping[date, float], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "score"])
        for day in sorted(scores):
            writer.writerow([day.isoformat(), _fmt_number(scores[day])])


def read_daily_scores_csv(path: str | Path) -> dict[date, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return {date.fromisoformat(r["date"]): float(r["score"]) for r in reader}


def date_range(first: date, last: date) -> list[date]:
    return [date.fromordinal(o) for o in range(first.toordinal(), last.toordinal() + 1)]


def _fmt_number(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def _parse_number(text: str) -> float:
    v = float(text)
    return int(v) if v.is_integer() else v


__all__ = [
    "DayStamp",
    "IliSeries",
    "DailyCounters",
    "aggregate_weekly",
    "week_index",
    "weekly_term_counts",
    "parse_day",
    "date_range",
    "round_half_up",
    "read_series_csv",
    "write_series_csv",
    "read_counters_csv",
    "write_counters_csv",
    "read_daily_scores_csv",
    "write_daily_scores_csv",
]
