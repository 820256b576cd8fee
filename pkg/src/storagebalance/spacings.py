"""Uniform spacings: the demand model, windowed maxima, and asymptotic predictors.

Demand vectors with a fixed cumulative load sigma are distributed like k
uniform spacings scaled to [0, sigma].  The windowed maxima of those spacings
(on the line and on the circle) drive both the exact stability conditions and
the Gumbel-type limit laws, so they are implemented here once, with batch
variants used by the Monte Carlo layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

_UINT64_MASK = (1 << 64) - 1

#: Euler-Mascheroni constant (mean of the standard Gumbel distribution).
EULER_GAMMA = 0.57721566490153286

REGIME_SINGLE = "fixed_m_single_choice"
REGIME_SMALL_D = "small_d"
REGIME_LOG_ORDER_D = "log_order_d"


@dataclass(frozen=True)
class RandomStream:
    """A reproducible, splittable random stream.

    Streams are keyed by ``(master_seed, stream_index)`` through a Philox
    counter-based generator: identical keys reproduce identical draw
    sequences, distinct stream indices give statistically independent
    streams.  Stream objects are cheap to create, so Monte Carlo code makes
    one per trial.
    """

    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        if self.stream_index < 0:
            raise ValueError("stream_index must be non-negative")

    def generator(self) -> np.random.Generator:
        key = [self.stream_index & _UINT64_MASK, self.master_seed & _UINT64_MASK]
        return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True, eq=False)
class SpacingSample:
    """k non-negative spacings summing to sigma (a demand vector)."""

    spacings: np.ndarray
    sigma: float
    k: int

    def __post_init__(self):
        s = np.asarray(self.spacings, dtype=np.float64)
        object.__setattr__(self, "spacings", s)
        if self.k < 1 or len(s) != self.k:
            raise ValueError(f"expected {self.k} spacings, got {len(s)}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if np.any(s < 0):
            raise ValueError("spacings must be non-negative")
        if abs(s.sum() - self.sigma) > 1e-12 * self.sigma:
            raise ValueError("spacings do not sum to sigma")


def sample_uniform_spacings(k: int, sigma: float, stream: RandomStream) -> SpacingSample:
    """Sample k spacings uniformly from the simplex of side sigma.

    Draws k unit-rate exponentials and normalizes (the Gamma representation
    of uniform spacings), which is O(k) and makes sigma a pure scale factor:
    the same stream at a different sigma yields the same sample multiplied
    by sigma.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    e = stream.generator().standard_exponential(k)
    return SpacingSample(spacings=e * (sigma / e.sum()), sigma=float(sigma), k=k)


def spacing_matrix(
    k: int, sigma: float, master_seed: int, trials: int, start_index: int = 0
) -> np.ndarray:
    """Stack ``trials`` independent samples into a (trials, k) matrix.

    Row i is bit-identical to
    ``sample_uniform_spacings(k, sigma, RandomStream(master_seed, start_index + i))``,
    so batch consumers see exactly the per-trial substreams.
    """
    out = np.empty((trials, k))
    for i in range(trials):
        e = RandomStream(master_seed, start_index + i).generator().standard_exponential(k)
        out[i] = e * (sigma / e.sum())
    return out


# ---------------------------------------------------------------------------
# Windowed maxima
# ---------------------------------------------------------------------------


def window_maxima_line(spacings: np.ndarray, d: int) -> np.ndarray:
    """Per-row maximum over sums of d consecutive spacings (no wrap).

    Accepts a (k,) vector or a (T, k) matrix.  Window sums are formed from a
    single prefix-sum array; the circular variant reuses the identical prefix
    values for non-wrapping windows, so circle >= line holds exactly in
    floating point.
    """
    a = np.atleast_2d(np.asarray(spacings, dtype=np.float64))
    k = a.shape[1]
    if not 1 <= d <= k:
        raise ValueError(f"d must be in [1, {k}], got {d}")
    p = np.zeros((a.shape[0], k + 1))
    np.cumsum(a, axis=1, out=p[:, 1:])
    out = (p[:, d:] - p[:, : k - d + 1]).max(axis=1)
    return out if np.ndim(spacings) > 1 else out[0]


def window_maxima_circle(spacings: np.ndarray, d: int) -> np.ndarray:
    """Per-row maximum over sums of d consecutive spacings with wraparound."""
    a = np.atleast_2d(np.asarray(spacings, dtype=np.float64))
    k = a.shape[1]
    if not 1 <= d <= k:
        raise ValueError(f"d must be in [1, {k}], got {d}")
    ext = np.concatenate([a, a[:, : d - 1]], axis=1)
    p = np.zeros((ext.shape[0], ext.shape[1] + 1))
    np.cumsum(ext, axis=1, out=p[:, 1:])
    out = (p[:, d : d + k] - p[:, :k]).max(axis=1)
    return out if np.ndim(spacings) > 1 else out[0]


def max_d_spacing_line(sample: SpacingSample, d: int) -> float:
    """Maximal d-spacing: largest sum of d consecutive spacings on the line."""
    return float(window_maxima_line(sample.spacings, d))


def max_d_spacing_circle(sample: SpacingSample, d: int) -> float:
    """Maximal d-spacing on the circle (indices wrap modulo k)."""
    return float(window_maxima_circle(sample.spacings, d))


def max_nonoverlapping_m_spacing(sample: SpacingSample, m: int) -> float:
    """Largest of the k/m disjoint m-blocks of spacings.

    Equals the max node load of a single-choice layout storing m objects per
    node, in sample units.  Requires m | k.
    """
    if m < 1 or sample.k % m != 0:
        raise ValueError(f"m must divide k={sample.k}, got m={m}")
    return float(sample.spacings.reshape(-1, m).sum(axis=1).max())


def count_spacings_in_range(sample: SpacingSample, lo: float, hi: float) -> int:
    """Number of spacings s with lo <= s <= hi."""
    if lo < 0 or lo > hi:
        raise ValueError("need 0 <= lo <= hi")
    s = sample.spacings
    return int(np.count_nonzero((s >= lo) & (s <= hi)))


# ---------------------------------------------------------------------------
# Limit-law building blocks
# ---------------------------------------------------------------------------


def gumbel_cdf(x):
    """Standard Gumbel distribution function exp(-exp(-x))."""
    return np.exp(-np.exp(-np.asarray(x, dtype=np.float64)))


def solve_alpha(c: float) -> float:
    """Unique positive root of (1 + a) * exp(-a) = exp(-1/c) for c > 0.

    The left side decreases strictly from 1 to 0 on a > 0, so the root is
    unique; solved by bracketed root-finding to absolute tolerance well under
    1e-12.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    target = math.exp(-1.0 / c)

    def f(a):
        return (1.0 + a) * math.exp(-a) - target

    hi = 1.0
    while f(hi) > 0:
        hi *= 2.0
    return float(brentq(f, 1e-16, hi, xtol=1e-15, rtol=8.9e-16))


def gumbel_centering_m_blocks(n: float, m: int) -> float:
    """Centering of the scaled non-overlapping block maximum, log n + f_n.

    f_n = (m - 1) loglog n - log((m - 1)!).  The statistic
    (max block) * m * n - centering converges to the standard Gumbel law for
    fixed m; for m = 1 the centering is just log n.
    """
    if n < 3:
        raise ValueError("n must be >= 3 for loglog to be positive")
    f_n = (m - 1) * math.log(math.log(n)) - math.lgamma(m)
    return math.log(n) + f_n


def dspacing_gumbel_centering(k: float, d: int, refined: bool = True) -> float:
    """Centering b_k for the Gumbel law of the maximal d-spacing times k.

    Asymptotic form: log k + (d-1) loglog k - log((d-1)!).  For d > 1 this
    converges very slowly; the refined form solves the self-consistent
    equation b = log k + (d-1) log b - log((d-1)!) by fixed-point iteration,
    which agrees to first order but tracks moderate k far better.
    """
    if k < 3:
        raise ValueError("k must be >= 3")
    base = math.log(k) - math.lgamma(d)
    if d == 1:
        return math.log(k)
    if not refined:
        return base + (d - 1) * math.log(math.log(k))
    b = math.log(k)
    for _ in range(100):
        nxt = base + (d - 1) * math.log(b)
        if abs(nxt - b) < 1e-13:
            return nxt
        b = nxt
    return b


# ---------------------------------------------------------------------------
# Closed-form predictors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AsymptoticPrediction:
    """Band prediction for the load-imbalance factor in one scaling regime.

    ``band_lo``/``band_hi`` bound the imbalance factor itself.  ``centering``
    and ``scale`` describe the underlying centered statistic: for the
    single-choice and small-d regimes the centering is in the (imbalance *
    m) resp. (imbalance * d) coordinate with scale 1; for the log-order-d
    regime the centering is of the scaled window maximum, with the iterated
    logarithm as fluctuation scale.
    """

    centering: float
    scale: float
    regime: str
    band_lo: float
    band_hi: float
    alpha: Optional[float] = None
    tau: Optional[float] = None

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.band_lo > self.band_hi:
            raise ValueError("band_lo must be <= band_hi")
        if self.regime == REGIME_LOG_ORDER_D:
            if self.alpha is None or self.tau is None:
                raise ValueError("log_order_d predictions carry alpha and tau")
            # tau = c (1+a)^2 / a determines c; check the defining equation.
            c = self.tau * self.alpha / (1.0 + self.alpha) ** 2
            resid = (1.0 + self.alpha) * math.exp(-self.alpha) - math.exp(-1.0 / c)
            if abs(resid) > 1e-10:
                raise ValueError("alpha does not satisfy its defining equation")


def predict_single_choice(n: float, m: int) -> AsymptoticPrediction:
    """Predictor for storage with no redundancy and m objects per node.

    The limit law says (imbalance * m) - log n - f_n is asymptotically
    standard Gumbel with f_n = (m-1) loglog n - log((m-1)!); the point
    prediction for imbalance * m is therefore log n + f_n.
    """
    if n < 3:
        raise ValueError("n must be >= 3")
    if m < 1:
        raise ValueError("m must be >= 1")
    center = gumbel_centering_m_blocks(n, m)
    return AsymptoticPrediction(
        centering=center,
        scale=1.0,
        regime=REGIME_SINGLE,
        band_lo=center,
        band_hi=center,
    )


def predict_d_choice(
    n: float, d: int, regime: str, c: Optional[float] = None
) -> AsymptoticPrediction:
    """Band for the imbalance factor of d-choice replica designs.

    small_d: with B = log n + (d-1)(1 + loglog n - log d), the imbalance lies
    in [B/(2d), B/d].  log_order_d (d = c log n): the band comes from the
    fluctuation bound of the window maximum, rearranged, using the root of
    (1+a)e^{-a} = e^{-1/c}.
    """
    if n < 3:
        raise ValueError("n must be >= 3")
    if d < 1:
        raise ValueError("d must be >= 1")
    if regime == REGIME_SMALL_D:
        b = math.log(n) + (d - 1) * (1.0 + math.log(math.log(n)) - math.log(d))
        return AsymptoticPrediction(
            centering=b,
            scale=1.0,
            regime=regime,
            band_lo=b / (2 * d),
            band_hi=b / d,
        )
    if regime == REGIME_LOG_ORDER_D:
        if c is None or c <= 0:
            raise ValueError("log_order_d regime requires c > 0")
        alpha = solve_alpha(c)
        tau = c * (1.0 + alpha) ** 2 / alpha
        q = 3.0 * (alpha + 1.0) / (2.0 * c * alpha) * math.log(math.log(n)) / math.log(n)
        return AsymptoticPrediction(
            centering=(1.0 + alpha) * c * math.log(n),
            scale=math.log(math.log(n)),
            regime=regime,
            band_lo=q / 6.0,
            band_hi=q,
            alpha=alpha,
            tau=tau,
        )
    raise ValueError(f"unknown regime {regime!r}")


def predict_xor(
    n: float, d: int, r: int, regime: str, c: Optional[float] = None
) -> AsymptoticPrediction:
    """Band for the imbalance factor of d-choice designs built from r-XORs.

    small_d: with beta = r(d-1)(1 + loglog n - log(1 + r(d-1))), the
    imbalance lies in [(log n + beta)/(2d), (log n + beta)/d].  log_order_d:
    the band is [X/2, X] with X = (a+1)(3 loglog n / (2 c a log n) + r).
    """
    if r < 2:
        raise ValueError("r must be >= 2 for XOR designs")
    if n < 3:
        raise ValueError("n must be >= 3")
    if d < 1:
        raise ValueError("d must be >= 1")
    if regime == REGIME_SMALL_D:
        beta = r * (d - 1) * (1.0 + math.log(math.log(n)) - math.log(1.0 + r * (d - 1)))
        b = math.log(n) + beta
        return AsymptoticPrediction(
            centering=b,
            scale=1.0,
            regime=regime,
            band_lo=b / (2 * d),
            band_hi=b / d,
        )
    if regime == REGIME_LOG_ORDER_D:
        if c is None or c <= 0:
            raise ValueError("log_order_d regime requires c > 0")
        alpha = solve_alpha(c)
        tau = c * (1.0 + alpha) ** 2 / alpha
        x = (alpha + 1.0) * (
            3.0 / (2.0 * c * alpha) * math.log(math.log(n)) / math.log(n) + r
        )
        return AsymptoticPrediction(
            centering=(1.0 + alpha) * c * math.log(n),
            scale=math.log(math.log(n)),
            regime=regime,
            band_lo=x / 2.0,
            band_hi=x,
            alpha=alpha,
            tau=tau,
        )
    raise ValueError(f"unknown regime {regime!r}")


def p_sigma_transition(
    kind_regime: str, d: int, m: int = 1, c: Optional[float] = None
) -> tuple[float, float]:
    """Thresholds (b_low, b_high) of the robustness phase transition.

    With cumulative load b * n / log n, the robustness probability tends to
    1 for b below b_low and to 0 for b above b_high.
    """
    if kind_regime == REGIME_SINGLE:
        return (float(m), float(m))
    if kind_regime == REGIME_SMALL_D:
        return (float(d), 2.0 * d)
    if kind_regime == REGIME_LOG_ORDER_D:
        if c is None or c <= 0:
            raise ValueError("log_order_d regime requires c > 0")
        alpha = solve_alpha(c)
        tau = c * (1.0 + alpha) ** 2 / alpha
        return (d / (1.5 * tau), 4.0 * d / tau)
    raise ValueError(f"unknown regime {kind_regime!r}")
