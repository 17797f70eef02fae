"""Synthetic seasons with known phase boundaries and tweet corpora driven by them."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .core import DailyCounters, IliSeries
from .fluhmm import N_PHASES, is_ordered
from .ingest import TweetRecord
from .textnorm import TermLexicon

# filler words never collide with a lexicon form (checked at generation time)
_FILLER = ("σημερα", "παλι", "ολη", "μερα", "αυριο", "σπιτι", "δουλεια")


@dataclass(frozen=True)
class SeasonSpec:
    n_weeks: int
    boundaries: tuple[int, int, int, int]
    phase_means: tuple[float, float, float, float, float]
    noise_sd: float
    seed: int
    season_start: date = date(2013, 6, 3)

    def __post_init__(self):
        b = tuple(int(v) for v in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "phase_means", tuple(float(v) for v in self.phase_means))
        if isinstance(self.season_start, str):
            object.__setattr__(self, "season_start", date.fromisoformat(self.season_start))
        if len(b) != N_PHASES - 1 or not (0 < b[0] < b[1] < b[2] < b[3] < self.n_weeks):
            raise ValueError(f"boundaries {b} must satisfy 0 < b1 < b2 < b3 < b4 < n_weeks")
        if len(self.phase_means) != N_PHASES or not is_ordered(self.phase_means):
            raise ValueError(f"phase means {self.phase_means} violate mu1<=mu2<=mu3>=mu4>=mu5")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")

    @classmethod
    def from_file(cls, path: str | Path) -> "SeasonSpec":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["season_start"] = self.season_start.isoformat()
        d["boundaries"] = list(self.boundaries)
        d["phase_means"] = list(self.phase_means)
        return d


def phase_path(spec: SeasonSpec) -> np.ndarray:
    """True phase (1..5) of every week; boundary ``b_i`` is the first week of phase i+1."""
    return 1 + np.searchsorted(np.array(spec.boundaries), np.arange(spec.n_weeks), side="right")


def generate_season(spec: SeasonSpec) -> tuple[IliSeries, np.ndarray]:
    rng = np.random.default_rng(spec.seed)
    path = phase_path(spec)
    means = np.array(spec.phase_means)[path - 1]
    noisy = means + spec.noise_sd * rng.standard_normal(spec.n_weeks)
    values = np.maximum(0, np.floor(noisy + 0.5)).astype(int)
    return IliSeries(spec.season_start, tuple(int(v) for v in values)), path


@dataclass(frozen=True)
class TermRate:
    base: float
    slope: float


@dataclass
class Corpus:
    records: list[TweetRecord]
    counts: DailyCounters


def generate_corpus(
    season: IliSeries,
    lexicon: TermLexicon,
    rates: dict[str, TermRate] | list[TermRate],
    seed: int,
) -> Corpus:
    """Poisson daily counts per term, each materialized as a one-keyword tweet.

    The mean for term j on a day of week w is ``base_j + slope_j * ili[w] / 7``.
    Tweet texts use a random listed variant of the term in a random letter case
    so that matching exercises normalization.
    """
    if isinstance(rates, dict):
        rates = [rates.get(e.base, TermRate(0.0, 0.0)) for e in lexicon]
    if len(rates) != len(lexicon):
        raise ValueError("one rate per lexicon entry required")
    for r in rates:
        if r.base < 0 or r.slope < 0:
            raise ValueError("rates must be nonnegative")
    for word in _FILLER:
        if lexicon.lookup(word) is not None:
            raise ValueError(f"lexicon contains filler word {word!r}")

    rng = np.random.default_rng(seed)
    base = np.array([r.base for r in rates])
    slope = np.array([r.slope for r in rates])
    records: list[TweetRecord] = []
    counts: dict[tuple[date, str], int] = {}
    serial = 0
    for w, ili in enumerate(season.values):
        lam = base + slope * (float(ili) / 7.0)
        for d in range(7):
            day = season.week_start(w) + timedelta(days=d)
            daily = rng.poisson(lam)
            n_day = int(daily.sum())
            if n_day == 0:
                continue
            terms = np.repeat(np.arange(len(rates)), daily)
            rng.shuffle(terms)
            seconds = np.sort(rng.integers(0, 86400, n_day))
            midnight = datetime(day.year, day.month, day.day, tzinfo=timezone.utc)
            for tid, sec in zip(terms, seconds):
                entry = lexicon.entries[tid]
                form = entry.variants[rng.integers(len(entry.variants))]
                if rng.random() < 0.3:
                    form = form.upper()
                filler = _FILLER[rng.integers(len(_FILLER))]
                records.append(
                    TweetRecord(
                        id=f"syn{seed}-{serial:08d}",
                        timestamp=midnight + timedelta(seconds=int(sec)),
                        user=f"user{rng.integers(1000):03d}",
                        text=f"{filler} {form}!",
                    )
                )
                serial += 1
            for tid in np.nonzero(daily)[0]:
                counts[(day, lexicon.entries[tid].base)] = int(daily[tid])
    return Corpus(records, DailyCounters(counts))
