"""Tweet-driven influenza-like-illness surveillance with a five-phase Bayesian HMM."""

from .core import DailyCounters, IliSeries, aggregate_weekly
from .fluhmm import FitResult, PhaseModel, SamplerConfig, fit, forward_backward_exact
from .textnorm import TermLexicon, normalize, tokenize

__version__ = "0.1.0"

__all__ = [
    "DailyCounters",
    "FitResult",
    "IliSeries",
    "PhaseModel",
    "SamplerConfig",
    "TermLexicon",
    "aggregate_weekly",
    "fit",
    "forward_backward_exact",
    "normalize",
    "tokenize",
]
