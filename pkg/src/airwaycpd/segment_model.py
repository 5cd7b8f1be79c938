"""Changepoint state space, Student-t segment likelihood and priors.

Indexing convention
-------------------
A series ``y`` of length ``n`` is indexed ``0 .. n-1`` (index = mm from the
start of the 1 mm grid).  A changepoint ``t`` is the first index of a new
segment, so ``tau = (t_1, ..., t_m)`` splits ``y`` into
``y[0:t_1], y[t_1:t_2], ..., y[t_m:n]``.  Every index belongs to exactly one
segment and every segment holds at least ``MIN_SEGMENT_LENGTH`` samples, which
restricts changepoints to ``2 .. n-2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

MIN_SEGMENT_LENGTH = 2

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class InvalidStateError(ValueError):
    """A chain state violates the changepoint invariants."""


class SegmentParams(NamedTuple):
    """Student-t parameters of one segment: location, squared scale, dof."""

    mu: float
    sigma2: float
    nu: float


@dataclass(frozen=True)
class ChainState:
    """One state of the changepoint chain.

    ``tau`` holds the interior changepoints in increasing order; the implicit
    boundaries ``0`` and ``n`` are never stored.  ``segments`` has one entry
    per segment, i.e. ``len(tau) + 1`` entries.
    """

    tau: tuple[int, ...]
    segments: tuple[SegmentParams, ...]

    @property
    def m(self) -> int:
        return len(self.tau)

    def bounds(self, n: int) -> list[int]:
        return [0, *self.tau, n]

    def validate(self, n: int, k_max: int | None = None) -> None:
        if len(self.segments) != len(self.tau) + 1:
            raise InvalidStateError(
                f"{len(self.segments)} segments for {len(self.tau)} changepoints"
            )
        if k_max is not None and self.m > k_max:
            raise InvalidStateError(f"m={self.m} exceeds k_max={k_max}")
        b = self.bounds(n)
        for lo, hi in zip(b[:-1], b[1:]):
            if hi - lo < MIN_SEGMENT_LENGTH:
                raise InvalidStateError(
                    f"segment [{lo}, {hi}) shorter than {MIN_SEGMENT_LENGTH} "
                    f"(tau={self.tau}, n={n})"
                )


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters of the segment and changepoint priors.

    mu ~ Normal(mu_mean, mu_sd**2)
    sigma2 ~ Scaled-Inv-chi2(sigma2_df, sigma2_scale)
    nu ~ Uniform[nu_low, nu_high]
    M ~ Binomial(n - 1, m_expected / (n - 1)), only ratios used so no
        renormalisation at k_max
    tau | M uniform over admissible ordered changepoint sets
    """

    mu_mean: float = 0.0
    mu_sd: float = 1.0
    sigma2_df: float = 5.0
    sigma2_scale: float = 0.4**2
    nu_low: float = 2.0
    nu_high: float = 100.0
    m_expected: float = 0.5

    def __post_init__(self):
        if self.mu_sd <= 0 or self.sigma2_df <= 0 or self.sigma2_scale <= 0:
            raise ValueError("prior scales must be positive")
        if not self.nu_low < self.nu_high:
            raise ValueError("nu_low must be below nu_high")

    def log_prior_mu(self, mu: float) -> float:
        z = (mu - self.mu_mean) / self.mu_sd
        return -0.5 * z * z - _HALF_LOG_2PI - math.log(self.mu_sd)

    def log_prior_sigma2(self, sigma2: float) -> float:
        if not sigma2 > 0:
            return -math.inf
        half_df = 0.5 * self.sigma2_df
        a = half_df * self.sigma2_scale
        return (
            half_df * math.log(a)
            - math.lgamma(half_df)
            - (half_df + 1.0) * math.log(sigma2)
            - a / sigma2
        )

    def log_prior_nu(self, nu: float) -> float:
        if self.nu_low <= nu <= self.nu_high:
            return -math.log(self.nu_high - self.nu_low)
        return -math.inf

    def log_prior_segment(self, p: SegmentParams) -> float:
        lp = self.log_prior_sigma2(p.sigma2) + self.log_prior_nu(p.nu)
        if lp == -math.inf:
            return lp
        return lp + self.log_prior_mu(p.mu)

    def log_prior_m(self, m: int, n: int) -> float:
        """Binomial(n - 1, m_expected / (n - 1)) log-pmf."""
        trials = n - 1
        if m < 0 or m > trials:
            return -math.inf
        p = self.m_expected / trials
        return (
            math.lgamma(trials + 1)
            - math.lgamma(m + 1)
            - math.lgamma(trials - m + 1)
            + m * math.log(p)
            + (trials - m) * math.log1p(-p)
        )

    def log_prior_tau(self, m: int, n: int) -> float:
        count = n_admissible_configurations(m, n)
        if count == 0:
            return -math.inf
        return -math.log(count)


def n_admissible_configurations(m: int, n: int) -> int:
    """Number of ordered changepoint sets of size ``m`` keeping every segment
    at least ``MIN_SEGMENT_LENGTH`` long (compositions of n into m+1 parts)."""
    free = n - MIN_SEGMENT_LENGTH * (m + 1)
    if m < 0 or free < 0:
        return 0
    return math.comb(free + m, m)


def student_t_logpdf(x, mu: float, sigma2: float, nu: float):
    """Elementwise location-scale Student-t log-density."""
    z2 = (np.asarray(x, dtype=float) - mu) ** 2 / (sigma2 * nu)
    const = (
        math.lgamma(0.5 * (nu + 1.0))
        - math.lgamma(0.5 * nu)
        - 0.5 * math.log(nu * math.pi * sigma2)
    )
    return const - 0.5 * (nu + 1.0) * np.log1p(z2)


def segment_loglik(values, params: SegmentParams) -> float:
    """Sum of Student-t log-densities of ``values`` under ``params``."""
    mu, sigma2, nu = params
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("segment has no values")
    z2 = (values - mu) ** 2 / (sigma2 * nu)
    const = (
        math.lgamma(0.5 * (nu + 1.0))
        - math.lgamma(0.5 * nu)
        - 0.5 * math.log(nu * math.pi * sigma2)
    )
    return values.size * const - 0.5 * (nu + 1.0) * float(np.log1p(z2).sum())


def total_loglik(y, state: ChainState, seg_loglik=segment_loglik) -> float:
    """Log-likelihood of the whole series, summed over independent segments."""
    y = np.asarray(y, dtype=float)
    n = y.size
    for t in state.tau:
        if not 1 <= t <= n - 1:
            raise InvalidStateError(f"changepoint {t} outside 1..{n - 1}")
    b = state.bounds(n)
    if any(hi <= lo for lo, hi in zip(b[:-1], b[1:])):
        raise InvalidStateError(f"changepoints {state.tau} not strictly increasing")
    if len(state.segments) != len(b) - 1:
        raise InvalidStateError("segment count does not match changepoints")
    return sum(
        seg_loglik(y[lo:hi], p) for lo, hi, p in zip(b[:-1], b[1:], state.segments)
    )


def log_prior(state: ChainState, priors: PriorSpec, n: int) -> float:
    """Joint log prior of (M, tau, theta); ``-inf`` outside the support."""
    lp = priors.log_prior_m(state.m, n) + priors.log_prior_tau(state.m, n)
    for p in state.segments:
        lp += priors.log_prior_segment(p)
        if lp == -math.inf:
            break
    return lp


def empirical_stats(values: Sequence[float]) -> tuple[float, float]:
    """Mean and unbiased variance of a segment (needs >= 2 values)."""
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.var(ddof=1))
