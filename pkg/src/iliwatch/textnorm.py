"""Greek-aware normalization, tokenization and keyword matching.

Case and accent variation is absorbed by :func:`normalize`; declensions and
conjugations must be listed explicitly in the lexicon file.
"""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from itertools import groupby
from pathlib import Path

_LETTER_RUN = re.compile(r"[^\W\d_]+")


@lru_cache(maxsize=65536)
def normalize(raw: str) -> str:
    """Decompose, lowercase, drop combining marks and map final sigma to sigma.

    >>> normalize("ΓΡΊΠΗ")
    'γριπη'
    >>> normalize("ιώσεις")
    'ιωσεισ'
    """
    # lowercasing may itself emit combining marks (e.g. U+0130), so strip after it
    text = unicodedata.normalize("NFD", unicodedata.normalize("NFD", raw).lower())
    text = "".join(ch for ch in text if not unicodedata.combining(ch))
    return text.replace("ς", "σ")


def tokenize(text: str) -> list[str]:
    """Normalized maximal letter runs of ``text``."""
    tokens = []
    for run in _LETTER_RUN.findall(normalize(text)):
        if run.isalpha():
            tokens.append(run)
        else:
            # \w also admits numerics such as roman numerals and fractions
            tokens.extend("".join(g) for alpha, g in groupby(run, str.isalpha) if alpha)
    return tokens


def remove_stopwords(tokens: list[str], stopwords: set[str] | frozenset[str]) -> list[str]:
    return [t for t in tokens if t not in stopwords]


@dataclass(frozen=True)
class LexiconEntry:
    term_id: int
    base: str
    variants: tuple[str, ...]


class TermLexicon:
    """Monitored keywords with their explicitly listed variants.

    Every stored form is normalized; term ids are dense from 0 in file order.
    A normalized form may belong to only one entry.
    """

    def __init__(self, entries: list[tuple[str, list[str]]], source_tag: str = ""):
        self.source_tag = source_tag
        self.entries: list[LexiconEntry] = []
        self._lookup: dict[str, int] = {}
        for term_id, (base, variants) in enumerate(entries):
            nbase = normalize(base)
            if not nbase:
                raise ValueError(f"entry {term_id}: empty base term")
            forms = [nbase]
            for v in variants:
                nv = normalize(v)
                if nv and nv not in forms:
                    forms.append(nv)
            for form in forms:
                owner = self._lookup.get(form)
                if owner is not None:
                    raise ValueError(
                        f"form {form!r} of entry {nbase!r} already belongs to "
                        f"{self.entries[owner].base!r}"
                    )
                self._lookup[form] = term_id
            self.entries.append(LexiconEntry(term_id, nbase, tuple(forms)))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def bases(self) -> list[str]:
        return [e.base for e in self.entries]

    def lookup(self, token: str) -> int | None:
        """Term id for an already-normalized token, or None."""
        return self._lookup.get(token)

    def term_id(self, base: str) -> int:
        tid = self._lookup.get(normalize(base))
        if tid is None or self.entries[tid].base != normalize(base):
            raise KeyError(base)
        return tid

    @classmethod
    def from_file(cls, path: str | Path) -> "TermLexicon":
        """Read ``base<TAB>variant1,variant2,...`` lines; ``#`` starts a comment line."""
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n").rstrip("\r")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                base, _, rest = line.partition("\t")
                variants = [v.strip() for v in rest.split(",") if v.strip()]
                entries.append((base.strip(), variants))
        return cls(entries, source_tag=str(path))

    def to_file(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            if self.source_tag:
                fh.write(f"# {self.source_tag}\n")
            for e in self.entries:
                fh.write(e.base + "\t" + ",".join(e.variants[1:]) + "\n")


def match_terms(text: str, lexicon: TermLexicon) -> Counter:
    """Multiset of term ids, one per token that equals a lexicon form."""
    hits: Counter = Counter()
    for token in tokenize(text):
        tid = lexicon.lookup(token)
        if tid is not None:
            hits[tid] += 1
    return hits


def load_stopwords(path: str | Path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(w for w in (normalize(line.strip()) for line in fh) if w)
