"""Least-squares model from selected-term counts to an ILI score.

The model is fitted on weekly counts against weekly ILI scores. Daily
estimates apply it to the day's counts scaled by 7 and divide the prediction
by 7, so seven identical days add up to the weekly estimate.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .core import DailyCounters, date_range

MODEL_FORMAT = "iliwatch.linear_model"
MODEL_VERSION = 1


class RankDeficientError(ValueError):
    def __init__(self, column: int):
        super().__init__(f"feature column {column} is linearly dependent on the intercept and earlier columns")
        self.column = column


@dataclass(frozen=True)
class LinearModel:
    terms: tuple[str, ...]
    coefficients: tuple[float, ...]
    intercept: float
    n_samples: int = 0
    rss: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.terms) != len(self.coefficients):
            raise ValueError("one coefficient per term required")

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "terms": list(self.terms),
            "coefficients": list(self.coefficients),
            "intercept": self.intercept,
            "training_meta": {"n_samples": self.n_samples, "rss": self.rss, **self.meta},
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "LinearModel":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
            raise ValueError(f"{path}: not a version-{MODEL_VERSION} {MODEL_FORMAT} document")
        meta = dict(doc.get("training_meta", {}))
        return cls(
            terms=tuple(doc["terms"]),
            coefficients=tuple(float(c) for c in doc["coefficients"]),
            intercept=float(doc["intercept"]),
            n_samples=int(meta.pop("n_samples", 0)),
            rss=float(meta.pop("rss", 0.0)),
            meta=meta,
        )


def fit_ols(features, targets, terms: list[str] | None = None) -> LinearModel:
    """Ordinary least squares with an intercept, solved by Householder QR.

    The design ``[1 | X]`` is factored as QR; a near-zero diagonal entry of R
    marks the first column that lies in the span of the columns before it.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError(f"targets must have length {n}, got shape {y.shape}")
    if n < p + 1:
        raise ValueError(f"need at least {p + 1} samples for {p} features, got {n}")
    if terms is None:
        terms = [str(j) for j in range(p)]
    if len(terms) != p:
        raise ValueError("one term label per feature column required")

    design = np.hstack([np.ones((n, 1)), X])
    q, r = np.linalg.qr(design, mode="reduced")
    diag = np.abs(np.diag(r))
    col_norms = np.linalg.norm(design, axis=0)
    tol = 1e-10
    for j in range(p + 1):
        if col_norms[j] == 0.0 or diag[j] <= tol * col_norms[j]:
            raise RankDeficientError(j - 1 if j > 0 else 0)

    beta = solve_triangular(r, q.T @ y)
    resid = y - design @ beta
    return LinearModel(
        terms=tuple(terms),
        coefficients=tuple(float(b) for b in beta[1:]),
        intercept=float(beta[0]),
        n_samples=n,
        rss=float(resid @ resid),
    )


def predict(model: LinearModel, features) -> float:
    """Estimated score ``max(0, coefficients . x + intercept)``."""
    x = np.asarray(features, dtype=float)
    if x.shape != (len(model.coefficients),):
        raise ValueError(f"expected {len(model.coefficients)} features, got shape {x.shape}")
    return max(0.0, float(np.dot(model.coefficients, x)) + model.intercept)


def estimate_daily(
    model: LinearModel, counters: DailyCounters, day_range: tuple[date, date] | None = None
) -> dict[date, float]:
    """Daily ILI estimates from a weekly-trained model (scale x7, predict, /7)."""
    if day_range is None:
        days = counters.days()
        if not days:
            return {}
        day_range = (days[0], days[-1])
    out = {}
    for day in date_range(*day_range):
        x = np.array([counters[(day, t)] for t in model.terms], dtype=float)
        out[day] = predict(model, 7.0 * x) / 7.0
    return out


def write_features_csv(matrix, terms: list[str], path: str | Path) -> None:
    """Weekly feature matrix as ``week,<term>,...`` rows."""
    m = np.asarray(matrix)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["week", *terms])
        for i, row in enumerate(m):
            w.writerow([i, *(int(v) if float(v).is_integer() else float(v) for v in row)])


def read_features_csv(path: str | Path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "week":
        raise ValueError(f"{path}: expected header starting with 'week'")
    terms = rows[0][1:]
    data = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=float).reshape(-1, len(terms))
    return data, terms
