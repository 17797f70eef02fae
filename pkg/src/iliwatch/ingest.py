"""Replay a tweet stream, filter it with the lexicon and keep daily term counters.

The live Twitter client is replaced by :class:`ReplaySource`, which reads one
JSON object per line. Any iterable of :class:`TweetRecord` works as a source.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np

from .core import DailyCounters, date_range
from .textnorm import TermLexicon, match_terms

log = logging.getLogger(__name__)


class StreamOrderError(ValueError):
    """A replayed record is older than the one before it."""


@dataclass(frozen=True)
class TweetRecord:
    id: str
    timestamp: datetime
    user: str
    text: str
    location: str | None = None

    @property
    def day(self) -> date:
        return self.timestamp.date()

    def to_json(self) -> str:
        obj = {
            "id": self.id,
            "timestamp": self.timestamp.isoformat().replace("+00:00", "Z"),
            "user": self.user,
            "text": self.text,
        }
        if self.location is not None:
            obj["location"] = self.location
        return json.dumps(obj, ensure_ascii=False)

    @classmethod
    def from_obj(cls, obj: dict) -> "TweetRecord":
        rid = obj["id"]
        if not isinstance(rid, str) or not rid:
            raise ValueError("id must be a nonempty string")
        text = obj["text"]
        if not isinstance(text, str):
            raise ValueError("text must be a string")
        return cls(
            id=rid,
            timestamp=parse_timestamp(obj["timestamp"]),
            user=str(obj.get("user", "")),
            text=text,
            location=obj.get("location"),
        )


def parse_timestamp(text: str) -> datetime:
    """ISO-8601 instant as an aware UTC datetime; naive stamps are taken as UTC."""
    if not isinstance(text, str):
        raise ValueError("timestamp must be a string")
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    stamp = datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        return stamp.replace(tzinfo=timezone.utc)
    return stamp.astimezone(timezone.utc)


@dataclass(frozen=True)
class MalformedRecord:
    lineno: int
    reason: str


class ReplaySource:
    """Newline-delimited JSON stream file, yielded in file order.

    Unparseable lines come out as :class:`MalformedRecord`; a timestamp older
    than its predecessor raises :class:`StreamOrderError`.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def __iter__(self) -> Iterator[TweetRecord | MalformedRecord]:
        last = None
        with self.path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = TweetRecord.from_obj(json.loads(line))
                except (ValueError, KeyError, TypeError) as exc:
                    yield MalformedRecord(lineno, f"{type(exc).__name__}: {exc}")
                    continue
                if last is not None and rec.timestamp < last:
                    raise StreamOrderError(
                        f"record {rec.id!r} at {self.path}:{lineno} is out of order "
                        f"({rec.timestamp.isoformat()} < {last.isoformat()})"
                    )
                last = rec.timestamp
                yield rec


def write_stream(records: Iterable[TweetRecord], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
            n += 1
    return n


class CounterStore:
    """Single-writer sink for daily counters plus the session's seen-id log."""

    def __init__(self, initial: DailyCounters | None = None):
        self._counts: dict[tuple[date, str], int] = dict(initial.items()) if initial else {}
        self.seen_ids: set[str] = set()

    def add(self, day: date, term: str, n: int = 1) -> None:
        key = (day, term)
        self._counts[key] = self._counts.get(key, 0) + n

    def snapshot(self) -> DailyCounters:
        return DailyCounters(self._counts)


@dataclass
class IngestSummary:
    seen: int = 0
    matched: int = 0
    counts_added: int = 0
    duplicates: int = 0
    malformed: int = 0

    def __str__(self) -> str:
        return (
            f"tweets seen={self.seen} matched={self.matched} counts added={self.counts_added} "
            f"duplicates={self.duplicates} malformed={self.malformed}"
        )


def run_ingest(
    source: Iterable[TweetRecord | MalformedRecord],
    lexicon: TermLexicon,
    sink: CounterStore,
    summary: IngestSummary | None = None,
) -> IngestSummary:
    """Match every record against the lexicon and add each hit to the sink.

    Records whose id was already seen by ``sink`` in this session are skipped,
    so replaying the same records is idempotent. Every token occurrence counts.
    """
    summary = summary or IngestSummary()
    bases = lexicon.bases
    for rec in source:
        if isinstance(rec, MalformedRecord):
            summary.malformed += 1
            log.debug("skipping malformed line %d: %s", rec.lineno, rec.reason)
            continue
        if rec.id in sink.seen_ids:
            summary.duplicates += 1
            continue
        sink.seen_ids.add(rec.id)
        summary.seen += 1
        hits = match_terms(rec.text, lexicon)
        if not hits:
            continue
        summary.matched += 1
        day = rec.day
        for tid, n in hits.items():
            sink.add(day, bases[tid], n)
            summary.counts_added += n
    return summary


def counters_to_features(
    counters: DailyCounters, terms: list[str], day_range: tuple[date, date]
) -> np.ndarray:
    """Dense day x term count matrix over the inclusive ``day_range``."""
    if not terms:
        raise ValueError("term list is empty")
    first, last = day_range
    if last < first:
        raise ValueError(f"empty day range {first} .. {last}")
    days = date_range(first, last)
    out = np.zeros((len(days), len(terms)), dtype=np.int64)
    for i, day in enumerate(days):
        for j, term in enumerate(terms):
            out[i, j] = counters[(day, term)]
    return out
