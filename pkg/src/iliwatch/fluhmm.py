"""Five-phase left-to-right Bayesian HMM for weekly ILI series.

Phases are ordered pre-epidemic, growth, plateau, decline, post-epidemic. A
season starts in the pre-epidemic phase, each week either stays or advances by
exactly one phase, and the post-epidemic phase is absorbing. Emissions are
Gaussian with a per-phase mean and standard deviation; the means are
constrained so the plateau mean is the largest::

    mu1 <= mu2 <= mu3 >= mu4 >= mu5

The posterior is explored with a Gibbs sampler that alternates a
forward-filtering backward-sampling draw of the phase path, conjugate draws of
the emission parameters and Beta draws of the advance probabilities. The
ordered means are drawn jointly by rejection; if that keeps failing, the sweep
instead updates each mean from its truncated conditional, which is still exact.

Before each sweep, three Metropolis-Hastings moves run with the path summed
out by the forward algorithm:

* an independence proposal for each phase's (mean, variance),
* an independence proposal for each advance probability, drawn from its prior,
* a shift that hands one phase's parameters to a neighbour.

Without them, a phase that empties keeps drawing its variance from the very
diffuse prior and is rarely re-entered. Chains are extended in fixed increments
until the split-chain potential scale reduction factor of every emission mean
drops below the threshold.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .core import IliSeries

log = logging.getLogger(__name__)

N_PHASES = 5
PHASE_NAMES = ("pre-epidemic", "growth", "plateau", "decline", "post-epidemic")

_LOG_2PI = math.log(2.0 * math.pi)
_SIGMA2_BOUNDS = (1e-12, 1e200)
_ADVANCE_BOUNDS = (1e-12, 1.0 - 1e-12)

# extra Metropolis-Hastings moves run before each Gibbs sweep (bit flags)
MOVE_REFRESH = 1
MOVE_ADVANCE = 2
MOVE_SHIFT = 4
ALL_MOVES = MOVE_REFRESH | MOVE_ADVANCE | MOVE_SHIFT


def is_ordered(mu) -> bool:
    m = mu
    return m[0] <= m[1] <= m[2] and m[2] >= m[3] >= m[4]


@dataclass(frozen=True)
class PhaseModel:
    """Emission means/sds per phase and the four advance probabilities."""

    mu: tuple[float, ...]
    sigma: tuple[float, ...]
    advance: tuple[float, ...]

    def __post_init__(self):
        mu = tuple(float(v) for v in self.mu)
        sigma = tuple(float(v) for v in self.sigma)
        advance = tuple(float(v) for v in self.advance)
        if len(mu) != N_PHASES or len(sigma) != N_PHASES or len(advance) != N_PHASES - 1:
            raise ValueError("PhaseModel needs 5 means, 5 sds and 4 advance probabilities")
        if not is_ordered(mu):
            raise ValueError(f"means {mu} violate mu1<=mu2<=mu3>=mu4>=mu5")
        if not all(s > 0 and math.isfinite(s) for s in sigma):
            raise ValueError(f"sds must be positive and finite, got {sigma}")
        if not all(0.0 < a < 1.0 for a in advance):
            raise ValueError(f"advance probabilities must lie in (0, 1), got {advance}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "advance", advance)

    def transition_matrix(self) -> np.ndarray:
        return transition_matrix(self.advance)

    def log_emission(self, y) -> np.ndarray:
        return log_emission(np.asarray(y, dtype=float), np.array(self.mu), np.array(self.sigma))


def transition_matrix(advance) -> np.ndarray:
    A = np.zeros((N_PHASES, N_PHASES))
    for k in range(N_PHASES - 1):
        A[k, k] = 1.0 - advance[k]
        A[k, k + 1] = advance[k]
    A[-1, -1] = 1.0
    return A


def log_emission(y: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Gaussian log densities, shape (weeks, phases)."""
    z = (y[:, None] - mu[None, :]) / sigma[None, :]
    return -0.5 * _LOG_2PI - np.log(sigma)[None, :] - 0.5 * z * z


def _log_transitions(advance) -> tuple[np.ndarray, np.ndarray]:
    adv = np.asarray(advance, dtype=float)
    log_stay = np.zeros(N_PHASES)
    log_stay[:-1] = np.log1p(-adv)
    return log_stay, np.log(adv)


def forward_backward_exact(series: IliSeries | np.ndarray, model: PhaseModel) -> np.ndarray:
    """Smoothed phase marginals P(phase_t = k | y_1..y_T), shape (weeks, 5).

    Both recursions run in log space and are renormalized at every step, so
    widely separated phases cannot underflow.
    """
    y = series.as_array() if isinstance(series, IliSeries) else np.asarray(series, dtype=float)
    T = len(y)
    if T < 1:
        raise ValueError("series must contain at least one week")
    log_b = model.log_emission(y)
    log_stay, log_adv = _log_transitions(model.advance)

    la = np.full((T, N_PHASES), -np.inf)
    la[0, 0] = log_b[0, 0]
    la[0] -= la[0, 0]
    for t in range(1, T):
        pred = la[t - 1] + log_stay
        pred[1:] = np.logaddexp(pred[1:], la[t - 1, :-1] + log_adv)
        row = pred + log_b[t]
        la[t] = row - np.logaddexp.reduce(row)

    lb = np.zeros((T, N_PHASES))
    for t in range(T - 2, -1, -1):
        nxt = lb[t + 1] + log_b[t + 1]
        row = log_stay + nxt
        row[:-1] = np.logaddexp(row[:-1], log_adv + nxt[1:])
        lb[t] = row - np.max(row)

    lg = la + lb
    lg -= np.max(lg, axis=1, keepdims=True)
    g = np.exp(lg)
    return g / g.sum(axis=1, keepdims=True)


@numba.njit(cache=True)
def _logaddexp(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@numba.njit(cache=True)
def _ffbs_kernel(log_b, log_stay, log_adv, u):
    """Forward filter then sample a 0-based path backwards using uniforms ``u``."""
    T, K = log_b.shape
    la = np.full((T, K), -np.inf)
    la[0, 0] = 0.0
    for t in range(1, T):
        norm = -np.inf
        for k in range(K):
            v = la[t - 1, k] + log_stay[k]
            if k > 0:
                v = _logaddexp(v, la[t - 1, k - 1] + log_adv[k - 1])
            v += log_b[t, k]
            la[t, k] = v
            norm = _logaddexp(norm, v)
        for k in range(K):
            la[t, k] -= norm

    path = np.zeros(T, dtype=np.int64)
    top = -np.inf
    for k in range(K):
        if la[T - 1, k] > top:
            top = la[T - 1, k]
    total = 0.0
    w = np.empty(K)
    for k in range(K):
        w[k] = math.exp(la[T - 1, k] - top)
        total += w[k]
    target = u[T - 1] * total
    acc = 0.0
    last = 0
    for k in range(K):
        if w[k] > 0.0:
            last = k
            acc += w[k]
            if target < acc:
                break
    path[T - 1] = last

    for t in range(T - 2, -1, -1):
        j = path[t + 1]
        if j == 0:
            path[t] = 0
            continue
        ws = la[t, j] + log_stay[j]
        wa = la[t, j - 1] + log_adv[j - 1]
        if ws == -np.inf:
            path[t] = j - 1
            continue
        if wa == -np.inf:
            path[t] = j
            continue
        # probability of having advanced into j at t+1
        p_adv = 1.0 / (1.0 + math.exp(ws - wa))
        path[t] = j - 1 if u[t] < p_adv else j
    return path


@numba.njit(cache=True)
def _log_marginal(y, mu, sigma2, log_stay, log_adv):
    """log p(y | parameters) with the phase path summed out (forward algorithm)."""
    T = y.shape[0]
    K = mu.shape[0]
    la = np.full(K, -np.inf)
    nxt = np.empty(K)
    la[0] = -0.5 * (_LOG_2PI + math.log(sigma2[0]) + (y[0] - mu[0]) ** 2 / sigma2[0])
    total = la[0]
    la[0] = 0.0
    for t in range(1, T):
        norm = -np.inf
        for k in range(K):
            v = la[k] + log_stay[k]
            if k > 0:
                v = _logaddexp(v, la[k - 1] + log_adv[k - 1])
            v += -0.5 * (_LOG_2PI + math.log(sigma2[k]) + (y[t] - mu[k]) ** 2 / sigma2[k])
            nxt[k] = v
            norm = _logaddexp(norm, v)
        for k in range(K):
            la[k] = nxt[k] - norm
        total += norm
    return total


@numba.njit(cache=True)
def _log_normal(x, m, s):
    z = (x - m) / s
    return -0.5 * _LOG_2PI - math.log(s) - 0.5 * z * z


@numba.njit(cache=True)
def _log_fresh(mu_k, s2_k, y, consts):
    """Log density of a fresh (mean, variance) proposal.

    The mean comes from the prior normal or a kernel density over the
    observations; the variance from the inverse-gamma prior or a log-normal
    around the data scale. Each picks its component independently.
    """
    m0, s0, bw, a0, b0, ls_mean, ls_sd, weight = consts[:8]
    kde = -np.inf
    for t in range(y.shape[0]):
        kde = _logaddexp(kde, _log_normal(mu_k, y[t], bw))
    kde -= math.log(y.shape[0])
    q_mu = _logaddexp(math.log(weight) + _log_normal(mu_k, m0, s0), math.log(1.0 - weight) + kde)
    ls2 = math.log(s2_k)
    ig = a0 * math.log(b0) - math.lgamma(a0) - (a0 + 1.0) * ls2 - b0 / s2_k
    ln = _log_normal(ls2, ls_mean, ls_sd) - ls2
    q_s2 = _logaddexp(math.log(weight) + ig, math.log(1.0 - weight) + ln)
    return q_mu + q_s2


@numba.njit(cache=True)
def _draw_fresh(y, consts):
    m0, s0, bw, a0, b0, ls_mean, ls_sd, weight = consts[:8]
    if np.random.random() < weight:
        m = np.random.normal(m0, s0)
    else:
        m = y[np.random.randint(0, y.shape[0])] + bw * np.random.normal()
    if np.random.random() < weight:
        v = b0 / max(np.random.gamma(a0, 1.0), 1e-300)
    else:
        v = math.exp(np.random.normal(ls_mean, ls_sd))
    return m, v


@numba.njit(cache=True)
def _log_jitter(mu_k, s2_k, mu_src, s2_src, consts):
    """Log density of a jittered copy of another phase's (mean, variance)."""
    copy_mu, copy_ls = consts[8], consts[9]
    ls2 = math.log(s2_k)
    return (
        _log_normal(mu_k, mu_src, copy_mu * math.sqrt(s2_src))
        + _log_normal(ls2, math.log(s2_src), copy_ls) - ls2
    )


@numba.njit(cache=True)
def _draw_jitter(mu_src, s2_src, consts):
    copy_mu, copy_ls = consts[8], consts[9]
    m = np.random.normal(mu_src, copy_mu * math.sqrt(s2_src))
    v = math.exp(np.random.normal(math.log(s2_src), copy_ls))
    return m, v


@numba.njit(cache=True)
def _log_prior(mu, s2, m0, s0, a0, b0):
    return _log_normal(mu, m0, s0) - (a0 + 1.0) * math.log(s2) - b0 / s2


@numba.njit(cache=True)
def _ordered(m):
    return m[0] <= m[1] and m[1] <= m[2] and m[2] >= m[3] and m[3] >= m[4]


@numba.njit(cache=True)
def _refresh_kernel(y, mu, sigma2, log_stay, log_adv, consts):
    """Independence Metropolis-Hastings update of each phase's (mean, variance).

    The phase path is summed out, so a phase that no week currently occupies
    can be repopulated. Updates ``mu``/``sigma2`` in place and returns the
    number of accepted proposals.
    """
    m0, s0, a0, b0 = consts[0], consts[1], consts[3], consts[4]
    ll = _log_marginal(y, mu, sigma2, log_stay, log_adv)
    accepted = 0
    for k in range(mu.shape[0]):
        new_mu, new_s2 = _draw_fresh(y, consts)
        log_u = math.log(max(np.random.random(), 1e-300))
        if not (_SIGMA2_BOUNDS[0] <= new_s2 <= _SIGMA2_BOUNDS[1]):
            continue
        old_mu = mu[k]
        old_s2 = sigma2[k]
        mu[k] = new_mu
        sigma2[k] = new_s2
        if not _ordered(mu):
            mu[k] = old_mu
            sigma2[k] = old_s2
            continue
        ll_new = _log_marginal(y, mu, sigma2, log_stay, log_adv)
        log_ratio = (
            ll_new + _log_prior(new_mu, new_s2, m0, s0, a0, b0) - _log_fresh(new_mu, new_s2, y, consts)
            - ll - _log_prior(old_mu, old_s2, m0, s0, a0, b0) + _log_fresh(old_mu, old_s2, y, consts)
        )
        if log_u < log_ratio:
            ll = ll_new
            accepted += 1
        else:
            mu[k] = old_mu
            sigma2[k] = old_s2
    return accepted


@numba.njit(cache=True)
def _shift_kernel(y, mu, sigma2, adv, log_stay, log_adv, consts, adv_a, adv_b):
    """Hand one phase's parameters to its neighbour and redraw the neighbour.

    For each adjacent pair (k, k+1) a direction is picked at random. Moving
    left, phase k takes a jittered copy of phase k+1 while k+1 gets a fresh
    draw; moving right is the mirror image, and each direction reverses the
    other. The advance probability out of phase k is redrawn from its prior
    in both. This lets a season's weeks migrate between phases in one step,
    which plain Gibbs updates cannot do when a phase's variance is tiny.
    """
    m0, s0, a0, b0 = consts[0], consts[1], consts[3], consts[4]
    lo, hi = _SIGMA2_BOUNDS
    alo, ahi = _ADVANCE_BOUNDS
    ll = _log_marginal(y, mu, sigma2, log_stay, log_adv)
    accepted = 0
    for k in range(mu.shape[0] - 1):
        ma, sa, mb, sb, old_adv = mu[k], sigma2[k], mu[k + 1], sigma2[k + 1], adv[k]
        left = np.random.random() < 0.5
        if left:
            na_m, na_s = _draw_jitter(mb, sb, consts)
            nb_m, nb_s = _draw_fresh(y, consts)
        else:
            nb_m, nb_s = _draw_jitter(ma, sa, consts)
            na_m, na_s = _draw_fresh(y, consts)
        new_adv = min(max(np.random.beta(adv_a, adv_b), alo), ahi)
        log_u = math.log(max(np.random.random(), 1e-300))
        if not (lo <= na_s <= hi and lo <= nb_s <= hi):
            continue
        if left:
            q_fwd = _log_jitter(na_m, na_s, mb, sb, consts) + _log_fresh(nb_m, nb_s, y, consts)
            q_rev = _log_fresh(ma, sa, y, consts) + _log_jitter(mb, sb, na_m, na_s, consts)
        else:
            q_fwd = _log_jitter(nb_m, nb_s, ma, sa, consts) + _log_fresh(na_m, na_s, y, consts)
            q_rev = _log_fresh(mb, sb, y, consts) + _log_jitter(ma, sa, nb_m, nb_s, consts)
        mu[k], sigma2[k], mu[k + 1], sigma2[k + 1] = na_m, na_s, nb_m, nb_s
        if not _ordered(mu):
            mu[k], sigma2[k], mu[k + 1], sigma2[k + 1] = ma, sa, mb, sb
            continue
        adv[k] = new_adv
        log_stay[k] = math.log1p(-new_adv)
        log_adv[k] = math.log(new_adv)
        ll_new = _log_marginal(y, mu, sigma2, log_stay, log_adv)
        # the advance draw comes from its prior, so its prior and proposal cancel
        log_ratio = (
            ll_new - ll
            + _log_prior(na_m, na_s, m0, s0, a0, b0) + _log_prior(nb_m, nb_s, m0, s0, a0, b0)
            - _log_prior(ma, sa, m0, s0, a0, b0) - _log_prior(mb, sb, m0, s0, a0, b0)
            + q_rev - q_fwd
        )
        if log_u < log_ratio:
            ll = ll_new
            accepted += 1
        else:
            mu[k], sigma2[k], mu[k + 1], sigma2[k + 1] = ma, sa, mb, sb
            adv[k] = old_adv
            log_stay[k] = math.log1p(-old_adv)
            log_adv[k] = math.log(old_adv)
    return accepted


@numba.njit(cache=True)
def _advance_refresh_kernel(y, mu, sigma2, adv, log_stay, log_adv, prop_adv, log_u):
    """Independence Metropolis-Hastings update of each advance probability.

    Proposals come from the Beta prior, so the acceptance ratio is the ratio of
    path-marginal likelihoods. Updates ``adv`` and its logs in place.
    """
    ll = _log_marginal(y, mu, sigma2, log_stay, log_adv)
    accepted = 0
    for k in range(adv.shape[0]):
        old = adv[k]
        adv[k] = prop_adv[k]
        log_stay[k] = math.log1p(-adv[k])
        log_adv[k] = math.log(adv[k])
        ll_new = _log_marginal(y, mu, sigma2, log_stay, log_adv)
        if log_u[k] < ll_new - ll:
            ll = ll_new
            accepted += 1
        else:
            adv[k] = old
            log_stay[k] = math.log1p(-old)
            log_adv[k] = math.log(old)
    return accepted


def ffbs_sample(series: IliSeries | np.ndarray, model: PhaseModel, rng: np.random.Generator) -> np.ndarray:
    """One phase path (values 1..5) drawn from P(path | y, model)."""
    y = series.as_array() if isinstance(series, IliSeries) else np.asarray(series, dtype=float)
    log_stay, log_adv = _log_transitions(model.advance)
    path = _ffbs_kernel(model.log_emission(y), log_stay, log_adv, rng.random(len(y)))
    return path + 1


class ZeroVarianceError(ValueError):
    pass


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor from between- and within-chain variance."""
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("need >= 2 chains of equal length >= 2")
    m, n = x.shape
    w = np.mean(np.var(x, axis=1, ddof=1))
    if w == 0.0:
        raise ZeroVarianceError("every chain has zero variance")
    b = n * np.var(np.mean(x, axis=1), ddof=1)
    var_hat = (n - 1) / n * w + b / n
    return float(np.sqrt(var_hat / w))


@dataclass(frozen=True)
class Priors:
    """Prior constants.

    Each emission mean gets a normal prior restricted to the ordered region.
    ``None`` centres it on the series mean with sd equal to the series range
    plus one. A much wider (or flat) prior makes every occupied phase so costly
    that seasons collapse onto fewer phases.
    """

    mean_center: float | None = None
    mean_sd: float | None = None
    var_shape: float = 0.01
    var_scale: float = 0.01
    advance_a: float = 1.0
    advance_b: float = 1.0


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    initial_iterations: int = 5000
    increment: int = 5000
    max_iterations: int = 50000
    burn_in_fraction: float = 0.5
    psrf_threshold: float = 1.1
    seed: int = 0
    max_rejections: int = 100
    moves: int = ALL_MOVES
    priors: Priors = field(default_factory=Priors)

    def __post_init__(self):
        if self.chains < 2:
            raise ValueError("chains must be >= 2")
        if self.initial_iterations < 1 or self.increment < 1:
            raise ValueError("initial_iterations and increment must be >= 1")
        if self.max_iterations < self.initial_iterations:
            raise ValueError("max_iterations must be >= initial_iterations")
        if not 0.0 < self.burn_in_fraction < 1.0:
            raise ValueError("burn_in_fraction must lie in (0, 1)")
        if not 0 <= self.moves <= ALL_MOVES:
            raise ValueError(f"moves must be a bit mask within {ALL_MOVES}")
        if not self.psrf_threshold > 1.0:
            raise ValueError("psrf_threshold must exceed 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        d = dict(d)
        priors = Priors(**d.pop("priors", {}))
        return cls(priors=priors, **d)


@dataclass
class FitResult:
    phase_probs: np.ndarray  # weeks x 5
    param_draws: dict[str, np.ndarray]  # mu/sigma: chains x kept x 5, advance: chains x kept x 4
    path_draws: np.ndarray  # chains x kept x weeks, phases 1..5
    psrf: dict[str, float]
    converged: bool
    total_iterations: int
    config: SamplerConfig
    sitewise_fallbacks: int = 0

    @property
    def n_weeks(self) -> int:
        return self.phase_probs.shape[0]

    def map_phases(self) -> np.ndarray:
        """Most probable phase (1..5) for each week."""
        return np.argmax(self.phase_probs, axis=1) + 1

    def growth_onset(self) -> int | None:
        """First week (0-based) whose most probable phase is past pre-epidemic."""
        past = np.nonzero(self.map_phases() > 1)[0]
        return int(past[0]) if len(past) else None

    def posterior_mean_model(self) -> PhaseModel:
        mu = self.param_draws["mu"].reshape(-1, N_PHASES).mean(axis=0)
        sigma = self.param_draws["sigma"].reshape(-1, N_PHASES).mean(axis=0)
        adv = self.param_draws["advance"].reshape(-1, N_PHASES - 1).mean(axis=0)
        return PhaseModel(tuple(_force_order(mu)), tuple(sigma), tuple(adv))


def _force_order(v: np.ndarray) -> np.ndarray:
    """Rearrange a mean vector into the unimodal shape with the peak at the plateau."""
    out = np.empty(N_PHASES)
    peak = float(np.max(v))
    out[2] = peak
    out[0:2] = np.sort(v[0:2])
    out[3:5] = np.sort(v[3:5])[::-1]
    return np.minimum(out, peak)


@numba.njit(cache=True)
def _gibbs_block(y, mu, sigma2, adv, start, stop, seed, priors, moves, refresh_consts,
                 max_rejections, out_mu, out_sigma, out_adv, out_paths):
    """Run Gibbs iterations ``start..stop-1`` of one chain, updating state in place.

    Returns (single-site fallbacks, accepted MH proposals).
    """
    np.random.seed(seed)
    m0, s0, a0, b0, aa, ab = priors
    T = y.shape[0]
    K = mu.shape[0]
    lo, hi = _SIGMA2_BOUNDS
    alo, ahi = _ADVANCE_BOUNDS
    log_stay = np.zeros(K)
    log_adv = np.empty(K - 1)
    log_b = np.empty((T, K))
    prop_adv = np.empty(K - 1)
    log_u = np.empty(K)
    n = np.empty(K)
    sy = np.empty(K)
    ss = np.empty(K)
    mean = np.empty(K)
    sd = np.empty(K)
    cand = np.empty(K)
    stay = np.empty(K - 1)
    moved = np.empty(K - 1)
    fallbacks = 0
    accepted = 0
    for it in range(start, stop):
        for k in range(K - 1):
            log_stay[k] = math.log1p(-adv[k])
            log_adv[k] = math.log(adv[k])

        if moves & MOVE_REFRESH:
            accepted += _refresh_kernel(y, mu, sigma2, log_stay, log_adv, refresh_consts)
        if moves & MOVE_ADVANCE:
            for k in range(K - 1):
                prop_adv[k] = min(max(np.random.beta(aa, ab), alo), ahi)
                log_u[k] = math.log(max(np.random.random(), 1e-300))
            accepted += _advance_refresh_kernel(y, mu, sigma2, adv, log_stay, log_adv, prop_adv, log_u)
        if moves & MOVE_SHIFT:
            accepted += _shift_kernel(y, mu, sigma2, adv, log_stay, log_adv, refresh_consts, aa, ab)

        # (a) phase path
        for t in range(T):
            for k in range(K):
                log_b[t, k] = -0.5 * (_LOG_2PI + math.log(sigma2[k]) + (y[t] - mu[k]) ** 2 / sigma2[k])
        path = _ffbs_kernel(log_b, log_stay, log_adv, np.random.random(T))

        # (b) emission parameters: variances given the current means, then means
        n[:] = 0.0
        sy[:] = 0.0
        ss[:] = 0.0
        for t in range(T):
            k = path[t]
            n[k] += 1.0
            sy[k] += y[t]
            ss[k] += (y[t] - mu[k]) ** 2
        for k in range(K):
            g = max(np.random.gamma(a0 + 0.5 * n[k], 1.0), 1e-300)
            sigma2[k] = min(max((b0 + 0.5 * ss[k]) / g, lo), hi)
            prec = n[k] / sigma2[k] + 1.0 / (s0 * s0)
            mean[k] = (sy[k] / sigma2[k] + m0 / (s0 * s0)) / prec
            sd[k] = 1.0 / math.sqrt(prec)
        ok = False
        for _ in range(max_rejections):
            for k in range(K):
                cand[k] = np.random.normal(mean[k], sd[k])
            if _ordered(cand):
                ok = True
                break
        if ok:
            mu[:] = cand
        else:
            # exact single-site updates from the current (ordered) means
            _sitewise_means(mu, mean, sd)
            fallbacks += 1

        # (c) advance probabilities
        stay[:] = 0.0
        moved[:] = 0.0
        for t in range(T - 1):
            k = path[t]
            if k < K - 1:
                if path[t + 1] == k:
                    stay[k] += 1.0
                else:
                    moved[k] += 1.0
        for k in range(K - 1):
            adv[k] = min(max(np.random.beta(aa + moved[k], ab + stay[k]), alo), ahi)

        out_mu[it] = mu
        out_sigma[it] = np.sqrt(sigma2)
        out_adv[it] = adv
        for t in range(T):
            out_paths[it, t] = path[t] + 1
    return fallbacks, accepted


@numba.njit(cache=True)
def _std_truncnorm(a, b):
    """Standard normal restricted to [a, b] (either end may be infinite)."""
    if b < 0.0:
        return -_std_truncnorm(-b, -a)
    if a <= 0.0:
        if b - a > 2.5066282746310002:
            while True:
                z = np.random.normal()
                if a <= z <= b:
                    return z
        while True:
            z = a + (b - a) * np.random.random()
            if np.random.random() <= math.exp(-0.5 * z * z):
                return z
    # 0 < a: exponential proposal unless the window is narrow
    lam = 0.5 * (a + math.sqrt(a * a + 4.0))
    narrow = b - a < (2.0 / (a + math.sqrt(a * a + 4.0))) * math.exp(0.5 * (a * a - a * math.sqrt(a * a + 4.0)) / 2.0 + 0.5)
    if narrow:
        while True:
            z = a + (b - a) * np.random.random()
            if np.random.random() <= math.exp(0.5 * (a * a - z * z)):
                return z
    while True:
        z = a + np.random.exponential(1.0 / lam)
        if z <= b and np.random.random() <= math.exp(-0.5 * (z - lam) ** 2):
            return z


@numba.njit(cache=True)
def _sitewise_means(mu, mean, sd):
    """One Gibbs pass over the means, each truncated to the interval its neighbours allow."""
    inf = np.inf
    for k in range(N_PHASES):
        if k == 0:
            lo, hi = -inf, mu[1]
        elif k == 1:
            lo, hi = mu[0], mu[2]
        elif k == 2:
            lo, hi = max(mu[1], mu[3]), inf
        elif k == 3:
            lo, hi = mu[4], mu[2]
        else:
            lo, hi = -inf, mu[3]
        z = _std_truncnorm((lo - mean[k]) / sd[k], (hi - mean[k]) / sd[k])
        mu[k] = min(max(mean[k] + sd[k] * z, lo), hi)


class _Chain:
    """State and stored draws of one Gibbs chain.

    Each block of iterations reseeds the compiled sampler from this chain's own
    generator, so a chain's draws depend only on (seed, chain index).
    """

    def __init__(self, y, priors, config, index, capacity):
        self.y = y
        self.rng = np.random.default_rng([config.seed, index])
        self.config = config
        self.m0, self.s0 = priors
        p = config.priors
        self.priors = (self.m0, self.s0, p.var_shape, p.var_scale, p.advance_a, p.advance_b)
        self.T = len(y)
        self.mu_draws = np.empty((capacity, N_PHASES))
        self.sigma_draws = np.empty((capacity, N_PHASES))
        self.adv_draws = np.empty((capacity, N_PHASES - 1))
        self.paths = np.empty((capacity, self.T), dtype=np.int8)
        self.done = 0
        self.sitewise_fallbacks = 0
        self.refresh_accepted = 0
        self.moves = config.moves
        scale = float(np.std(y)) + 1.0
        # (m0, s0, kernel bandwidth, IG shape, IG scale, log-variance mean, log-variance sd,
        #  prior weight, shift jitter on the mean in sds, shift jitter on log-variance)
        self.refresh_consts = (
            self.m0, self.s0, 0.25 * scale, p.var_shape, p.var_scale, 2.0 * math.log(0.25 * scale), 2.0,
            0.5, 0.5, 0.5,
        )
        self._init_state()

    def _init_state(self):
        y, rng = self.y, self.rng
        lo = float(np.percentile(y, 10))
        hi = float(np.max(y))
        spread = float(np.std(y)) + 1.0
        mid = 0.5 * (lo + hi)
        base = np.array([lo, mid, hi, mid, lo]) + rng.normal(0.0, 0.1 * spread, N_PHASES)
        self.mu = _force_order(base)
        self.sigma2 = (0.5 * spread * rng.uniform(0.8, 1.2, N_PHASES)) ** 2
        rate = min(0.5, N_PHASES / self.T)
        self.adv = np.clip(rate * rng.uniform(0.5, 1.5, N_PHASES - 1), *_ADVANCE_BOUNDS)

    def run(self, until: int):
        if until <= self.done:
            return
        block_seed = int(self.rng.integers(0, 2**31 - 1))
        fallbacks, accepted = _gibbs_block(
            self.y, self.mu, self.sigma2, self.adv, self.done, until, block_seed,
            self.priors, self.moves, self.refresh_consts, self.config.max_rejections,
            self.mu_draws, self.sigma_draws, self.adv_draws, self.paths,
        )
        self.sitewise_fallbacks += fallbacks
        self.refresh_accepted += accepted
        self.done = until


def _split_psrf(draws: np.ndarray) -> float:
    """Split-chain PSRF for draws shaped (chains, kept)."""
    half = draws.shape[1] // 2
    if half < 2:
        return math.inf
    split = np.concatenate([draws[:, :half], draws[:, half : 2 * half]], axis=0)
    try:
        return gelman_rubin(split)
    except ZeroVarianceError:
        return 1.0 if np.ptp(split) == 0.0 else math.inf


def resolve_priors(y: np.ndarray, priors: Priors) -> tuple[float, float]:
    center = float(np.mean(y)) if priors.mean_center is None else priors.mean_center
    if priors.mean_sd is None:
        scale = float(np.ptp(y)) + 1.0
    else:
        scale = priors.mean_sd
    return center, scale


def fit(series: IliSeries | np.ndarray, config: SamplerConfig | None = None) -> FitResult:
    """Run the Gibbs chains until the emission means converge or the cap is hit.

    Non-convergence is reported through ``converged=False``, not an exception.
    """
    config = config or SamplerConfig()
    y = series.as_array() if isinstance(series, IliSeries) else np.asarray(series, dtype=float)
    if y.ndim != 1 or len(y) < N_PHASES:
        raise ValueError(f"need a 1-d series of at least {N_PHASES} weeks, got shape {y.shape}")
    if np.any(~np.isfinite(y)) or np.any(y < 0):
        raise ValueError("weekly scores must be finite and nonnegative")

    priors = resolve_priors(y, config.priors)
    chains = [_Chain(y, priors, config, c, config.max_iterations) for c in range(config.chains)]
    target = config.initial_iterations
    while True:
        for ch in chains:
            ch.run(target)
        burn = int(config.burn_in_fraction * target)
        mu = np.stack([ch.mu_draws[burn:target] for ch in chains])
        psrf = {f"mu{k + 1}": _split_psrf(mu[:, :, k]) for k in range(N_PHASES)}
        converged = all(v < config.psrf_threshold for v in psrf.values())
        log.info("iterations=%d psrf=%s", target, {k: round(v, 4) for k, v in psrf.items()})
        if converged or target >= config.max_iterations:
            break
        target = min(target + config.increment, config.max_iterations)

    paths = np.stack([ch.paths[burn:target] for ch in chains])
    freq = np.stack([(paths == k + 1).sum(axis=(0, 1)) for k in range(N_PHASES)], axis=1)
    phase_probs = freq / freq.sum(axis=1, keepdims=True)
    fallbacks = sum(ch.sitewise_fallbacks for ch in chains)
    if fallbacks:
        log.info("rejection draw of the means fell back to single-site updates %d times", fallbacks)
    return FitResult(
        phase_probs=phase_probs,
        param_draws={
            "mu": mu,
            "sigma": np.stack([ch.sigma_draws[burn:target] for ch in chains]),
            "advance": np.stack([ch.adv_draws[burn:target] for ch in chains]),
        },
        path_draws=paths,
        psrf=psrf,
        converged=converged,
        total_iterations=target,
        config=config,
        sitewise_fallbacks=fallbacks,
    )


FIT_FORMAT = "iliwatch.fit"
FIT_VERSION = 1


def fit_to_dict(result: FitResult, series: IliSeries | None = None) -> dict:
    doc = {
        "format": FIT_FORMAT,
        "version": FIT_VERSION,
        "phases": list(PHASE_NAMES),
        "weeks": result.n_weeks,
        "phase_probs": [[float(p) for p in row] for row in result.phase_probs],
        "psrf": {k: float(v) for k, v in result.psrf.items()},
        "converged": bool(result.converged),
        "total_iterations": int(result.total_iterations),
        "sitewise_fallbacks": int(result.sitewise_fallbacks),
        "config": result.config.to_dict(),
    }
    if series is not None:
        doc["season_start"] = series.season_start.isoformat()
        doc["series"] = [float(v) for v in series.values]
    return doc


def write_fit_json(result: FitResult, path, series: IliSeries | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fit_to_dict(result, series), fh, indent=1)
        fh.write("\n")


def read_fit_json(path) -> dict:
    """Load a fit document; ``phase_probs`` comes back as an array."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FIT_FORMAT or doc.get("version") != FIT_VERSION:
        raise ValueError(f"{path}: not a version-{FIT_VERSION} {FIT_FORMAT} document")
    doc["phase_probs"] = np.asarray(doc["phase_probs"], dtype=float)
    return doc
