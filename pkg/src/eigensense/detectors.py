"""Closed-form Bayesian detection ratios over eigenvalue spectra.

Implements, all as functions of the eigenvalues x_1 >= ... >= x_N of Y Y^H:

* the pure-noise log likelihood,
* the single-source (SIMO) and multi-source (MIMO, m <= N) signal
  likelihoods, assembled term-by-term in signed log arithmetic,
* the decision ratio C = P(signal)/P(noise) for every combination of
  known/bounded source count and known/gridded noise power,
* the classical energy detector baseline, and
* the source-count posterior over {0, 1, ..., m_max} sources.

The alternating sums in the closed forms can cancel catastrophically when
eigenvalues cluster, so every evaluation tracks its cancellation severity
and re-runs in multiprecision arithmetic when more than
CANCEL_DIGITS_LIMIT decimal digits were lost or the sign came out wrong.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import mpmath as mp
import numpy as np
from scipy.special import logsumexp

from .errors import DegeneracyError, DomainError, NumericError
from .special import (
    CANCEL_DIGITS_LIMIT,
    CancellationReport,
    SignedLog,
    _log_j_batch,
    _log_j_segment_mp,
    signed_log_sum,
)
from .spectra import EigenSpectrum

__all__ = [
    "ExactCount",
    "BoundedCount",
    "ExactNoise",
    "NoiseGrid",
    "PriorConfig",
    "DetectionStatistic",
    "CountPosterior",
    "log_noise_likelihood",
    "log_simo_signal_likelihood",
    "log_mimo_signal_likelihood",
    "detection_log_ratio",
    "energy_statistic",
    "source_count_posteriors",
]

_LN10 = math.log(10.0)
_LOG_PI = math.log(math.pi)

# Degeneracy guard: eigenvalue pairs closer than this (relative to x_1) get a
# deterministic perturbation before the signal formulas are evaluated.
_GAP_REL = 1e-9
_PERTURB_EPS = 1e-8


# ---------------------------------------------------------------------------
# Receiver priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExactCount:
    """The receiver knows the number of transmitting sources."""

    m: int

    def __post_init__(self):
        if int(self.m) < 1:
            raise DomainError("source count must be >= 1")
        object.__setattr__(self, "m", int(self.m))


@dataclass(frozen=True)
class BoundedCount:
    """Source count unknown; uniform prior over 1..m_max."""

    m_max: int

    def __post_init__(self):
        if int(self.m_max) < 1:
            raise DomainError("m_max must be >= 1")
        object.__setattr__(self, "m_max", int(self.m_max))


@dataclass(frozen=True)
class ExactNoise:
    """The receiver knows the noise power sigma2."""

    sigma2: float

    def __post_init__(self):
        s = float(self.sigma2)
        if not (math.isfinite(s) and s > 0.0):
            raise DomainError("sigma2 must be a positive finite real")
        object.__setattr__(self, "sigma2", s)


@dataclass(frozen=True)
class NoiseGrid:
    """Noise power known only to lie in a range; marginalised over a grid.

    On the linear scale sigma2_min/sigma2_max bound sigma2 itself and the
    grid takes the k_points midpoints of equal cells (a uniform prior, so the
    weights are equal and cancel in the ratio).  On the "db" scale the bounds
    are read as 10*log10(sigma2) and the points are spaced evenly in dB,
    endpoints included; the non-uniform linear cell widths then enter as
    explicit weights so the prior stays uniform in sigma2.
    """

    sigma2_min: float
    sigma2_max: float
    k_points: int
    scale: str = "linear"

    def __post_init__(self):
        lo, hi, k = float(self.sigma2_min), float(self.sigma2_max), int(self.k_points)
        if self.scale not in ("linear", "db"):
            raise DomainError(f"grid scale must be 'linear' or 'db', got {self.scale!r}")
        if k < 1:
            raise DomainError("k_points must be >= 1")
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise DomainError("grid bounds must be finite")
        if self.scale == "linear" and lo <= 0.0:
            raise DomainError("linear sigma2 grid requires sigma2_min > 0")
        if k >= 2 and not lo < hi:
            raise DomainError("grid with k_points >= 2 requires sigma2_min < sigma2_max")
        if k == 1 and lo > hi:
            raise DomainError("grid requires sigma2_min <= sigma2_max")
        object.__setattr__(self, "sigma2_min", lo)
        object.__setattr__(self, "sigma2_max", hi)
        object.__setattr__(self, "k_points", k)

    def points_and_weights(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.k_points
        if self.scale == "linear":
            delta = (self.sigma2_max - self.sigma2_min) / k
            points = self.sigma2_min + (np.arange(k) + 0.5) * delta
            weights = np.full(k, 1.0 / k)
            return points, weights
        if k == 1:
            mid_db = 0.5 * (self.sigma2_min + self.sigma2_max)
            return np.array([10.0 ** (mid_db / 10.0)]), np.array([1.0])
        step = (self.sigma2_max - self.sigma2_min) / (k - 1)
        db = self.sigma2_min + step * np.arange(k)
        points = 10.0 ** (db / 10.0)
        weights = 10.0 ** ((db + 0.5 * step) / 10.0) - 10.0 ** ((db - 0.5 * step) / 10.0)
        weights = weights / weights.sum()
        return points, weights


@dataclass(frozen=True)
class PriorConfig:
    """What the receiver knows: source count and noise power."""

    source_count: ExactCount | BoundedCount
    noise: ExactNoise | NoiseGrid

    def __post_init__(self):
        if not isinstance(self.source_count, (ExactCount, BoundedCount)):
            raise DomainError("source_count must be ExactCount or BoundedCount")
        if not isinstance(self.noise, (ExactNoise, NoiseGrid)):
            raise DomainError("noise must be ExactNoise or NoiseGrid")


# ---------------------------------------------------------------------------
# Result containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectionStatistic:
    """A detector output: the statistic as a SignedLog plus diagnostics.

    For the Bayesian detectors log_ratio carries ln C; for the energy
    detector it carries the raw (linear) statistic in log form.  The sign is
    +1 for every valid Bayesian statistic.
    """

    log_ratio: SignedLog
    detector_id: str
    cancellation: CancellationReport
    extended_used: bool = False
    perturbed: bool = False

    @property
    def log10_ratio(self) -> float:
        if self.log_ratio.sign == 0:
            return -math.inf
        if self.log_ratio.sign < 0:
            return math.nan
        return self.log_ratio.log_magnitude / _LN10

    def decides_signal(self, log_threshold: float = 0.0) -> bool:
        """Compare ln C against a natural-log threshold (default ln 1 = 0)."""
        if self.log_ratio.sign == 0:
            return False
        return self.log_ratio.log_magnitude > log_threshold


@dataclass(frozen=True)
class CountPosterior:
    """Posterior over the number of sources k, under a uniform prior."""

    counts: tuple
    probabilities: tuple
    ratios: tuple
    sigma2: float
    m_max: int
    includes_noise_hypothesis: bool

    def argmax_count(self) -> int:
        return self.counts[int(np.argmax(self.probabilities))]


# ---------------------------------------------------------------------------
# Validation and the degeneracy guard
# ---------------------------------------------------------------------------

def _check_sigma2(sigma2: float) -> float:
    s = float(sigma2)
    if not (math.isfinite(s) and s > 0.0):
        raise DomainError(f"sigma2 must be positive and finite, got {sigma2}")
    return s


def _check_bayes_shape(n: int, L: int) -> None:
    if L <= n:
        raise DomainError(
            f"Bayesian detectors require more snapshots than sensors (L > N); got N={n}, L={L}")


def _guard_values(vals: np.ndarray) -> tuple[np.ndarray, bool]:
    """Perturb a descending spectrum whose gaps fall under the guard threshold.

    The offsets are deterministic and symmetric around zero (epsilon * x_1 *
    centred rank); when a symmetric shift would push the smallest eigenvalue
    negative, a nonnegative variant anchored at the smallest value is used.
    """
    n = vals.size
    if n == 1:
        return vals, False
    scale = vals[0] if vals[0] > 0.0 else 1.0
    gaps = vals[:-1] - vals[1:]
    if gaps.min() >= _GAP_REL * scale:
        return vals, False
    ranks = np.arange(1, n + 1, dtype=float)
    offsets = _PERTURB_EPS * scale * (0.5 * (n + 1) - ranks)
    if vals[-1] + offsets[-1] < 0.0:
        offsets = _PERTURB_EPS * scale * (n - ranks)
    out = vals + offsets
    if np.any(out[:-1] - out[1:] <= 0.0) or np.any(out < 0.0):
        raise DegeneracyError("spectrum remained degenerate after the deterministic guard")
    return out, True


def _guard_values_batch(vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise version of _guard_values for (B, N) descending spectra."""
    b, n = vals.shape
    if n == 1:
        return vals, np.zeros(b, dtype=bool)
    scale = np.where(vals[:, 0] > 0.0, vals[:, 0], 1.0)
    gaps = vals[:, :-1] - vals[:, 1:]
    flagged = gaps.min(axis=1) < _GAP_REL * scale
    if not flagged.any():
        return vals, flagged
    out = vals.copy()
    ranks = np.arange(1, n + 1, dtype=float)
    sym = 0.5 * (n + 1) - ranks
    pos = n - ranks
    for i in np.nonzero(flagged)[0]:
        offsets = _PERTURB_EPS * scale[i] * sym
        if vals[i, -1] + offsets[-1] < 0.0:
            offsets = _PERTURB_EPS * scale[i] * pos
        out[i] = vals[i] + offsets
        if np.any(out[i, :-1] - out[i, 1:] <= 0.0) or np.any(out[i] < 0.0):
            raise DegeneracyError("spectrum remained degenerate after the deterministic guard")
    return out, flagged


# ---------------------------------------------------------------------------
# Noise likelihood
# ---------------------------------------------------------------------------

def _noise_ll_from_values(gvals_sum: float, n: int, L: int, sigma2: float) -> float:
    return -n * L * math.log(math.pi * sigma2) - gvals_sum / sigma2


def log_noise_likelihood(x: EigenSpectrum, sigma2: float) -> float:
    """ln P(Y | pure noise at power sigma2): -NL ln(pi sigma2) - sum(x)/sigma2."""
    s2 = _check_sigma2(sigma2)
    vals = x.sorted_descending()
    return _noise_ll_from_values(float(np.sum(vals)), x.n_sensors, x.n_snapshots, s2)


# ---------------------------------------------------------------------------
# Signed row-wise log-sum-exp (the batch twin of signed_log_sum)
# ---------------------------------------------------------------------------

def _signed_lse_rows(signs: np.ndarray, logmags: np.ndarray):
    """Row sums of sign*exp(logmag) terms in canonical order.

    Returns (sign, log_magnitude, peak_term_log, cancellation_digits), each
    of shape (B,).  Rows whose terms are all zero sum to sign 0.
    """
    order = np.lexsort((signs, -logmags), axis=-1)
    sm = np.take_along_axis(signs, order, axis=-1)
    lm = np.take_along_axis(logmags, order, axis=-1)
    peak = lm[:, 0].copy()
    finite_peak = np.isfinite(peak)
    shifted = np.where(finite_peak[:, None], lm - peak[:, None], -np.inf)
    terms = sm * np.exp(shifted)
    total = np.zeros(signs.shape[0])
    comp = np.zeros(signs.shape[0])
    for col in range(terms.shape[1]):
        y = terms[:, col] - comp
        t = total + y
        comp = (t - total) - y
        total = t
    nonzero = total != 0.0
    safe = np.where(nonzero, np.abs(total), 1.0)
    with np.errstate(divide="ignore"):
        log_mag = np.where(nonzero, peak + np.log(safe), -np.inf)
    digits = np.where(nonzero, np.maximum(0.0, -np.log(safe) / _LN10), np.inf)
    digits = np.where(finite_peak, digits, 0.0)
    sign = np.where(finite_peak, np.sign(total), 0.0)
    log_mag = np.where(finite_peak, log_mag, -np.inf)
    return sign, log_mag, peak, digits


# ---------------------------------------------------------------------------
# SIMO signal likelihood (single source)
# ---------------------------------------------------------------------------

def _simo_prefactor_rows(gvals: np.ndarray, L: int, sigma2: float) -> np.ndarray:
    # Constant fixed against three independent oracles (Monte Carlo channel
    # averaging, and direct quadrature at N=1 and N=2): no 1/N factor.
    b, n = gvals.shape
    const = sigma2 - L * n * _LOG_PI - (n - 1) * (L - 1) * math.log(sigma2)
    return const - gvals.sum(axis=1) / sigma2


def _simo_batch(gvals: np.ndarray, L: int, sigma2: float):
    """ln P(Y | one source) over a (B, N) stack of guarded descending spectra."""
    b, n = gvals.shape
    k = n - L - 1
    jlog = _log_j_batch(k, sigma2, gvals.ravel()).reshape(b, n)
    diffs = gvals[:, :, None] - gvals[:, None, :]
    eye = np.eye(n, dtype=bool)
    absd = np.abs(diffs)
    absd[:, eye] = 1.0
    sgn = np.sign(diffs)
    sgn[:, eye] = 1.0
    denom_log = np.log(absd).sum(axis=2)
    denom_sign = sgn.prod(axis=2)
    logmags = gvals / sigma2 + jlog - denom_log
    sign, log_mag, peak, digits = _signed_lse_rows(denom_sign, logmags)
    pref = _simo_prefactor_rows(gvals, L, sigma2)
    return sign, log_mag + pref, peak + pref, digits


# ---------------------------------------------------------------------------
# MIMO signal likelihood (m sources, m <= N)
# ---------------------------------------------------------------------------

def _perm_sign(perm) -> int:
    inversions = sum(1 for i in range(len(perm)) for j in range(i + 1, len(perm))
                     if perm[i] > perm[j])
    return -1 if inversions % 2 else 1


def _mimo_prefactor_rows(gvals: np.ndarray, L: int, m: int, sigma2: float) -> np.ndarray:
    # Leading constant is 1/m! (each m-subset of sensors appears m! times in
    # the ordered-tuple sum); validated against the Monte Carlo oracle at
    # (N=3, m=2) and (N=4, m=2) and against the m=1 reduction.
    b, n = gvals.shape
    const = (-math.lgamma(m + 1)
             + 0.5 * m * (2 * L - m + 1) * math.log(m)
             + m * m * sigma2
             - n * L * _LOG_PI
             - (n - m) * (L - m) * math.log(sigma2)
             - sum(math.lgamma(j + 1) for j in range(1, m)))
    return const - gvals.sum(axis=1) / sigma2


def _mimo_batch(gvals: np.ndarray, L: int, m: int, sigma2: float):
    """ln P(Y | m sources) over a (B, N) stack of guarded descending spectra.

    Outer sum over ordered m-tuples a of distinct sensor indices; inner
    alternating sum over permutations b of {1..m} of products
    J_{N-L-2+b_l}(m sigma2, m x_{a_l}); everything in signed log space.
    """
    b, n = gvals.shape
    jlogs = [
        _log_j_batch(n - L - 2 + j, m * sigma2, (m * gvals).ravel()).reshape(b, n)
        for j in range(1, m + 1)
    ]
    diffs = gvals[:, :, None] - gvals[:, None, :]
    eye = np.eye(n, dtype=bool)
    absd = np.abs(diffs)
    absd[:, eye] = 1.0
    logabs = np.log(absd)
    sgn = np.sign(diffs)
    sgn[:, eye] = 1.0

    tuples = list(itertools.permutations(range(n), m))
    bperms = list(itertools.permutations(range(1, m + 1)))
    parities = [_perm_sign(p) for p in bperms]
    # The inner sum is (-1)^(m(m-1)/2) times the permutation expansion of a
    # determinant in J orders; this global sign makes the likelihood positive.
    sign_pref = -1.0 if (m * (m - 1) // 2) % 2 else 1.0

    col_logs = []
    col_signs = []
    for a in tuples:
        dlog = np.zeros(b)
        dsgn = np.ones(b)
        for i in range(m):
            keep = [j for j in range(n) if j not in a[: i + 1]]
            if keep:
                dlog += logabs[:, a[i], keep].sum(axis=1)
                dsgn *= sgn[:, a[i], keep].prod(axis=1)
        eterm = gvals[:, list(a)].sum(axis=1) / sigma2
        for parity, bp in zip(parities, bperms):
            jl = np.zeros(b)
            for l in range(m):
                jl += jlogs[bp[l] - 1][:, a[l]]
            col_logs.append(eterm + jl - dlog)
            col_signs.append(sign_pref * parity * dsgn)

    logmags = np.stack(col_logs, axis=1)
    signs = np.stack(col_signs, axis=1)
    sign, log_mag, peak, digits = _signed_lse_rows(signs, logmags)
    pref = _mimo_prefactor_rows(gvals, L, m, sigma2)
    return sign, log_mag + pref, peak + pref, digits


# ---------------------------------------------------------------------------
# Multiprecision fallback (shared by SIMO and MIMO; m=1 reduces exactly)
# ---------------------------------------------------------------------------

def _signal_mp(gvals: np.ndarray, L: int, m: int, sigma2: float, dps: int):
    """Multiprecision ln P(Y | m sources); returns (sign, logmag, peak, digits)."""
    n = gvals.size
    with mp.workdps(dps):
        s2 = mp.mpf(sigma2)
        xs = [mp.mpf(float(v)) for v in gvals]
        x_arg = m * s2
        u_lo = mp.log(x_arg)
        jlog = [[_log_j_segment_mp(n - L - 2 + j, m * xs[idx], u_lo, mp.inf, dps)
                 for idx in range(n)] for j in range(1, m + 1)]

        tuples = list(itertools.permutations(range(n), m))
        bperms = list(itertools.permutations(range(1, m + 1)))
        parities = [_perm_sign(p) for p in bperms]
        sign_pref = -1 if (m * (m - 1) // 2) % 2 else 1

        term_logs = []
        term_signs = []
        for a in tuples:
            dlog = mp.mpf(0)
            dsgn = 1
            for i in range(m):
                for j in range(n):
                    if j in a[: i + 1]:
                        continue
                    d = xs[a[i]] - xs[j]
                    if d == 0:
                        raise DegeneracyError("degenerate spectrum reached the multiprecision path")
                    dlog += mp.log(abs(d))
                    dsgn = dsgn if d > 0 else -dsgn
            eterm = mp.fsum(xs[i] for i in a) / s2
            for parity, bp in zip(parities, bperms):
                jl = mp.fsum(jlog[bp[l] - 1][a[l]] for l in range(m))
                term_logs.append(eterm + jl - dlog)
                term_signs.append(sign_pref * parity * dsgn)

        peak = max(term_logs)
        total = mp.fsum(s * mp.e ** (lm - peak) for s, lm in zip(term_signs, term_logs))
        sum_x = mp.fsum(xs)
        pref = (-mp.log(mp.factorial(m))
                + mp.mpf(m) * (2 * L - m + 1) / 2 * mp.log(m)
                + m * m * s2
                - n * L * mp.log(mp.pi)
                - (n - m) * (L - m) * mp.log(s2)
                - mp.fsum(mp.log(mp.factorial(j)) for j in range(1, m)))
        pref = pref - sum_x / s2
        if total == 0:
            return 0, -math.inf, float(peak + pref), math.inf
        log_mag = peak + mp.log(abs(total)) + pref
        digits = max(0.0, float(-mp.log(abs(total)) / mp.log(10)))
        return (1 if total > 0 else -1), float(log_mag), float(peak + pref), digits


# ---------------------------------------------------------------------------
# Scalar evaluation with automatic escalation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _LLResult:
    value: SignedLog
    report: CancellationReport
    extended_used: bool


def _signal_from_guarded(gvals: np.ndarray, L: int, m: int, sigma2: float,
                         precision: str, mimo_path: bool) -> _LLResult:
    if precision not in ("standard", "extended"):
        raise DomainError(f"unknown precision mode {precision!r}")
    digits_hint = math.inf
    if precision == "standard":
        batch = gvals[None, :]
        if mimo_path:
            sign, log_mag, peak, digits = (arr[0] for arr in _mimo_batch(batch, L, m, sigma2))
        else:
            sign, log_mag, peak, digits = (arr[0] for arr in _simo_batch(batch, L, sigma2))
        if sign == 1 and digits <= CANCEL_DIGITS_LIMIT and math.isfinite(log_mag):
            return _LLResult(SignedLog(1, float(log_mag)),
                             CancellationReport(float(peak), float(log_mag), float(digits)),
                             False)
        digits_hint = float(digits)

    if math.isfinite(digits_hint):
        dps = min(300, 40 + int(1.6 * digits_hint))
    else:
        dps = 60
    for _ in range(2):
        sign, log_mag, peak, digits = _signal_mp(gvals, L, m, sigma2, dps)
        if sign == 1:
            return _LLResult(SignedLog(1, log_mag),
                             CancellationReport(peak, log_mag, digits),
                             True)
        dps = min(600, 2 * dps)
    raise NumericError(
        f"signal likelihood sign stayed {sign} after multiprecision retry "
        f"(N={gvals.size}, L={L}, m={m}, sigma2={sigma2})")


def _prepare_spectrum(x: EigenSpectrum, sigma2: float) -> tuple[np.ndarray, bool]:
    _check_sigma2(sigma2)
    _check_bayes_shape(x.n_sensors, x.n_snapshots)
    return _guard_values(x.sorted_descending())


def log_simo_signal_likelihood(x: EigenSpectrum, sigma2: float, *,
                               precision: str = "standard") -> SignedLog:
    """ln P(Y | one source, noise power sigma2) as a SignedLog (sign +1)."""
    gvals, _ = _prepare_spectrum(x, sigma2)
    return _signal_from_guarded(gvals, x.n_snapshots, 1, float(sigma2),
                                precision, mimo_path=False).value


def log_mimo_signal_likelihood(x: EigenSpectrum, m: int, sigma2: float, *,
                               precision: str = "standard") -> SignedLog:
    """ln P(Y | m sources, noise power sigma2) as a SignedLog (sign +1)."""
    m = int(m)
    if m < 1:
        raise DomainError("m must be >= 1")
    if m > x.n_sensors:
        raise DomainError(f"m={m} sources with N={x.n_sensors} sensors is unsupported (m <= N)")
    gvals, _ = _prepare_spectrum(x, sigma2)
    return _signal_from_guarded(gvals, x.n_snapshots, m, float(sigma2),
                                precision, mimo_path=True).value


# ---------------------------------------------------------------------------
# Decision ratios
# ---------------------------------------------------------------------------

def _expand_prior(prior: PriorConfig, n_sensors: int):
    if isinstance(prior.source_count, ExactCount):
        ms = [prior.source_count.m]
        bounded = False
    else:
        ms = list(range(1, prior.source_count.m_max + 1))
        bounded = True
    if max(ms) > n_sensors:
        raise DomainError(
            f"prior allows m={max(ms)} sources but the spectrum has only N={n_sensors}")
    if isinstance(prior.noise, ExactNoise):
        points = np.array([prior.noise.sigma2])
        weights = np.array([1.0])
    else:
        points, weights = prior.noise.points_and_weights()
    return ms, bounded, points, weights


def _worst_report(reports) -> CancellationReport:
    worst = None
    for r in reports:
        if worst is None or r.cancellation_digits > worst.cancellation_digits:
            worst = r
    return worst if worst is not None else CancellationReport(-math.inf, -math.inf, 0.0)


def _marginal_statistic(gvals: np.ndarray, L: int, ms, bounded: bool,
                        points: np.ndarray, weights: np.ndarray,
                        precision: str):
    """Assemble ln C from guarded values for an expanded prior.

    Returns (SignedLog, worst CancellationReport, extended_used).
    """
    n = gvals.size
    gsum = float(np.sum(gvals))
    num_terms = []
    reports = []
    extended = False
    for m in ms:
        for p, w in zip(points, weights):
            r = _signal_from_guarded(gvals, L, m, float(p), precision,
                                     mimo_path=(m > 1))
            num_terms.append(r.value.scaled_by_log(math.log(w)))
            reports.append(r.report)
            extended = extended or r.extended_used
    num, outer = signed_log_sum(num_terms)
    reports.append(outer)
    if num.sign != 1:
        raise NumericError("marginalised signal likelihood is not positive")
    den = logsumexp([
        math.log(w) + _noise_ll_from_values(gsum, n, L, float(p))
        for p, w in zip(points, weights)
    ])
    extra = -math.log(len(ms)) if bounded else 0.0
    stat = SignedLog(1, num.log_magnitude + extra - float(den))
    return stat, _worst_report(reports), extended


def detection_log_ratio(x: EigenSpectrum, prior: PriorConfig, *,
                        precision: str = "standard") -> DetectionStatistic:
    """ln C = ln P(Y | signal prior) - ln P(Y | noise prior) as a statistic.

    Dispatches on the prior: exact or bounded source count, exact or gridded
    noise power.  Bounded count averages the per-m likelihoods (uniform
    prior); gridded noise mixes both numerator and denominator with the grid
    weights.  The result sign is always +1; anything else raises.
    """
    ms, bounded, points, weights = _expand_prior(prior, x.n_sensors)
    sigma_ref = float(points[0])
    gvals, perturbed = _prepare_spectrum(x, sigma_ref)
    stat, report, extended = _marginal_statistic(
        gvals, x.n_snapshots, ms, bounded, points, weights, precision)
    return DetectionStatistic(stat, "bayes", report, extended, perturbed)


def energy_statistic(x: EigenSpectrum, sigma2: float) -> DetectionStatistic:
    """The classical energy detector: sum(x) / (L N sigma2), in log form."""
    s2 = _check_sigma2(sigma2)
    vals = x.sorted_descending()
    value = float(np.sum(vals)) / (x.n_snapshots * x.n_sensors * s2)
    stat = SignedLog.from_float(value)
    report = CancellationReport(stat.log_magnitude, stat.log_magnitude, 0.0)
    return DetectionStatistic(stat, "energy", report)


# ---------------------------------------------------------------------------
# Source counting
# ---------------------------------------------------------------------------

def source_count_posteriors(x: EigenSpectrum, sigma2: float, m_max: int, *,
                            include_noise_hypothesis: bool = True,
                            precision: str = "standard") -> CountPosterior:
    """Posterior over the source count k under a uniform hypothesis prior.

    With include_noise_hypothesis (the default) the hypothesis set is
    k = 0 (pure noise) through k = m_max; otherwise only k = 1..m_max.
    probabilities[k] is proportional to P(Y | k sources), and ratios[k]
    is the posterior odds p_k / (1 - p_k).
    """
    m_max = int(m_max)
    if not 1 <= m_max <= x.n_sensors:
        raise DomainError(f"m_max must lie in [1, N]; got m_max={m_max}, N={x.n_sensors}")
    s2 = _check_sigma2(sigma2)
    gvals, _ = _prepare_spectrum(x, s2)
    L = x.n_snapshots
    gsum = float(np.sum(gvals))

    counts = []
    log_ev = []
    if include_noise_hypothesis:
        counts.append(0)
        log_ev.append(_noise_ll_from_values(gsum, x.n_sensors, L, s2))
    for k in range(1, m_max + 1):
        r = _signal_from_guarded(gvals, L, k, s2, precision, mimo_path=(k > 1))
        counts.append(k)
        log_ev.append(r.value.log_magnitude)

    log_ev = np.array(log_ev)
    shifted = log_ev - log_ev.max()
    probs = np.exp(shifted)
    probs /= probs.sum()
    ratios = []
    for i in range(len(log_ev)):
        others = np.delete(log_ev, i)
        ratios.append(float(np.exp(log_ev[i] - logsumexp(others))))
    return CountPosterior(tuple(counts), tuple(float(p) for p in probs),
                          tuple(ratios), s2, m_max, include_noise_hypothesis)


# ---------------------------------------------------------------------------
# Batched statistics for the Monte Carlo harness
# ---------------------------------------------------------------------------

def _batch_energy_stats(vals: np.ndarray, L: int, sigma2: float) -> np.ndarray:
    """Log of the energy statistic for a (B, N) stack (log 0 -> -inf)."""
    s2 = _check_sigma2(sigma2)
    sums = vals.sum(axis=1)
    with np.errstate(divide="ignore"):
        return np.log(sums / (L * vals.shape[1] * s2))


def _batch_fast_stats(vals: np.ndarray, L: int, prior: PriorConfig):
    """Double-precision ln C for a (B, N) stack of descending spectra.

    Touches no global state, so it is safe to run from worker threads.
    Returns (stats, bad, n_perturbed) where bad flags rows whose evaluation
    cancelled too hard (or signed wrong) and must be redone scalar-side.
    """
    b, n = vals.shape
    _check_bayes_shape(n, L)
    ms, bounded, points, weights = _expand_prior(prior, n)
    gvals, pert_mask = _guard_values_batch(vals)

    comp_logs = []
    bad = np.zeros(b, dtype=bool)
    for m in ms:
        for p, w in zip(points, weights):
            if m == 1:
                sign, log_mag, _, digits = _simo_batch(gvals, L, float(p))
            else:
                sign, log_mag, _, digits = _mimo_batch(gvals, L, m, float(p))
            bad |= (sign != 1) | (digits > CANCEL_DIGITS_LIMIT) | ~np.isfinite(log_mag)
            comp_logs.append(log_mag + math.log(w))

    if len(comp_logs) == 1:
        num_log = comp_logs[0]
    else:
        num_log = logsumexp(np.stack(comp_logs, axis=1), axis=1)
    gsum = gvals.sum(axis=1)
    den_cols = np.stack([
        math.log(w) + (-n * L * math.log(math.pi * float(p)) - gsum / float(p))
        for p, w in zip(points, weights)
    ], axis=1)
    den_log = logsumexp(den_cols, axis=1)
    extra = -math.log(len(ms)) if bounded else 0.0
    stats = num_log + extra - den_log
    return stats, bad, int(pert_mask.sum())


def _retry_rows_scalar(vals: np.ndarray, L: int, prior: PriorConfig,
                       stats: np.ndarray, rows, precision: str = "standard"):
    """Redo flagged rows through the scalar (escalating) path, in place.

    Serial by design: the multiprecision fallback adjusts global mpmath
    precision, so this must not run concurrently.  Returns
    (failed_mask_over_rows, n_extended).
    """
    failed = np.zeros(len(rows), dtype=bool)
    n_extended = 0
    for j, i in enumerate(rows):
        try:
            ds = detection_log_ratio(EigenSpectrum(vals[i], L), prior,
                                     precision=precision)
            stats[i] = ds.log_ratio.log_magnitude
            n_extended += int(ds.extended_used)
        except NumericError:
            stats[i] = np.nan
            failed[j] = True
    return failed, n_extended


def _batch_detection_stats(vals: np.ndarray, L: int, prior: PriorConfig,
                           precision: str = "standard"):
    """ln C for a (B, N) stack of descending spectra.

    Returns (stats, failed, n_extended, n_perturbed); rows that could not be
    evaluated even in the scalar fallback are NaN with failed=True.
    """
    stats, bad, n_perturbed = _batch_fast_stats(vals, L, prior)
    failed = np.zeros(vals.shape[0], dtype=bool)
    n_extended = 0
    if bad.any():
        rows = np.nonzero(bad)[0]
        row_failed, n_extended = _retry_rows_scalar(vals, L, prior, stats, rows,
                                                    precision)
        failed[rows] = row_failed
    return stats, failed, n_extended, n_perturbed
