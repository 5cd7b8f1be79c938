"""Reversible-jump Metropolis-Hastings over changepoint configurations.

Four moves are dispatched uniformly among those admissible in the current
state: resample all segment parameters, shift one changepoint, add a
changepoint (birth) and delete one (death).  Death and shift need ``m >= 1``
and birth needs ``m < k_max``; the dispatcher redraws among the admissible
moves, so move probabilities depend on ``m`` and their ratio enters the
birth/death acceptance.

Birth splits the segment containing the new changepoint.  The location and
scale of each half are its empirical mean/variance plus Gaussian noise, and
the degrees of freedom split as ``(nu + u, nu - u)``; that map has Jacobian
2.  Death is the inverse: the merged location/scale are proposed from the
empirical statistics of the merged segment and ``nu = (nu_l + nu_r) / 2``
(Jacobian 1/2).

The chain itself runs in compiled kernels (:mod:`._kernels`); the move
functions here draw with a :class:`numpy.random.Generator` and evaluate the
same kernel expressions, which makes single moves easy to test.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .segment_model import MIN_SEGMENT_LENGTH, ChainState, PriorSpec, SegmentParams

logger = logging.getLogger(__name__)

MOVES = ("resample", "shift", "birth", "death")

BIRTH_JACOBIAN = 2.0
DEATH_JACOBIAN = 0.5

SIGMA2_FLOOR = 1e-6
NOISE_FLOOR = 1e-3

# multiples of the robust noise level used when epsilon is not given
AUTO_SCALE_MU = 0.5
AUTO_SCALE_SIGMA2 = 0.5
AUTO_EPS_NU = 10.0

LIKELIHOODS = ("student_t", "flat")


def robust_noise_level(y) -> float:
    """Noise standard deviation from the MAD of first differences."""
    d = np.diff(np.asarray(y, dtype=float))
    if d.size == 0:
        return NOISE_FLOOR
    mad = float(np.median(np.abs(d - np.median(d))))
    return max(1.4826 * mad / math.sqrt(2.0), NOISE_FLOOR)


def default_scales(y) -> tuple[float, float, float]:
    """Proposal scales for (mu, sigma2, nu) matched to the noise in ``y``."""
    s = robust_noise_level(y)
    return (AUTO_SCALE_MU * s, AUTO_SCALE_SIGMA2 * s * s, AUTO_EPS_NU)


def default_jump_scales(y, priors: PriorSpec | None = None) -> tuple[float, float, float]:
    """Birth/death offset scales.

    A segment created by a birth may hold only a couple of points, so its
    parameters sit near the prior rather than near the empirical moments.
    The offsets are therefore never narrower than the prior spread: the
    prior scale for mu and the prior standard deviation of sigma2 (or its
    scale when the variance is infinite).  Offsets much narrower than that
    make the matching death nearly impossible once such a segment exists.
    """
    pr = priors if priors is not None else PriorSpec()
    s2 = pr.sigma2_scale
    df = pr.sigma2_df
    s2_spread = s2 * df / (df - 2) * math.sqrt(2 / (df - 4)) if df > 4 else s2
    mu_eps, s2_eps, nu_eps = default_scales(y)
    return (max(mu_eps, math.sqrt(s2)), max(s2_eps, s2_spread), nu_eps)


def _as_triple(value, name) -> tuple[float, float, float]:
    eps = np.atleast_1d(np.asarray(value, dtype=float))
    if eps.shape not in ((1,), (3,)) or not np.all(eps > 0):
        raise ValueError(f"{name} must be a positive scalar or (mu, sigma2, nu) triple")
    if eps.size == 1:
        return (float(eps[0]),) * 3
    return tuple(float(e) for e in eps)


@dataclass(frozen=True)
class SamplerConfig:
    """Run settings for :func:`run_chain`.

    ``epsilon`` is the standard deviation of the Gaussian perturbations in
    the resample and shift moves.  A scalar applies to all of (mu, sigma2,
    nu); a triple sets them separately; ``None`` derives them from the
    series noise level (see :func:`default_scales`).

    ``jump_epsilon`` is the same for the birth/death offsets.  ``None``
    reuses an explicit ``epsilon``, or falls back to
    :func:`default_jump_scales` when ``epsilon`` is also ``None``.
    """

    iterations: int = 100_000
    burn_in_fraction: float = 0.25
    thin: int = 5
    k_max: int = 10
    epsilon: float | tuple[float, float, float] | None = None
    jump_epsilon: float | tuple[float, float, float] | None = None
    lam: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError("iterations must be a positive integer")
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ValueError("burn_in_fraction must lie in [0, 1)")
        if int(self.thin) != self.thin or self.thin < 1:
            raise ValueError("thin must be a positive integer")
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise ValueError("k_max must be a positive integer")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        for name in ("epsilon", "jump_epsilon"):
            value = getattr(self, name)
            if value is not None:
                _as_triple(value, name)

    def scales_for(self, y) -> tuple[float, float, float]:
        if self.epsilon is None:
            return default_scales(y)
        return _as_triple(self.epsilon, "epsilon")

    def jump_scales_for(self, y, priors: PriorSpec | None = None) -> tuple[float, float, float]:
        if self.jump_epsilon is not None:
            return _as_triple(self.jump_epsilon, "jump_epsilon")
        if self.epsilon is not None:
            return _as_triple(self.epsilon, "epsilon")
        return default_jump_scales(y, priors)

    @property
    def burn_in(self) -> int:
        return int(self.iterations * self.burn_in_fraction)

    @property
    def n_stored(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


def _pack_priors(priors: PriorSpec) -> np.ndarray:
    return np.array(
        [
            priors.mu_mean,
            priors.mu_sd,
            priors.sigma2_df,
            priors.sigma2_scale,
            priors.nu_low,
            priors.nu_high,
            priors.m_expected,
        ],
        dtype=float,
    )


class Target:
    """Posterior target for one series.

    Parameters
    ----------
    y : array_like
        The series.
    priors : PriorSpec, optional
    k_max : int
        Maximum number of changepoints.
    likelihood : {"student_t", "flat"}
        ``"flat"`` replaces the likelihood by a constant so the chain samples
        the prior.
    """

    def __init__(self, y, priors=None, k_max=10, likelihood="student_t"):
        self.y = np.ascontiguousarray(y, dtype=float)
        if self.y.ndim != 1:
            raise ValueError("y must be one-dimensional")
        self.n = self.y.size
        if self.n < MIN_SEGMENT_LENGTH:
            raise ValueError(f"series of length {self.n} is too short")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("y contains non-finite values")
        if likelihood not in LIKELIHOODS:
            raise ValueError(f"likelihood must be one of {LIKELIHOODS}")
        self.priors = priors if priors is not None else PriorSpec()
        self.pp = _pack_priors(self.priors)
        self.k_max = int(k_max)
        self.flat = likelihood == "flat"
        # centred cumulative sums keep the variance formula well conditioned
        self.shift = float(self.y.mean())
        c = self.y - self.shift
        self.cs = np.concatenate([[0.0], np.cumsum(c)])
        self.cs2 = np.concatenate([[0.0], np.cumsum(c * c)])

    def seg_stats(self, lo: int, hi: int) -> tuple[float, float]:
        """Empirical mean and unbiased variance of ``y[lo:hi]``."""
        return K.seg_stats(self.cs, self.cs2, self.shift, lo, hi)

    def loglik(self, lo: int, hi: int, p: SegmentParams) -> float:
        return K.seg_loglik(self.y, lo, hi, p.mu, p.sigma2, p.nu, self.flat)

    def log_prior_segment(self, p: SegmentParams) -> float:
        return K.log_prior_seg(p.mu, p.sigma2, p.nu, self.pp)

    def log_prior_mt(self, m: int) -> float:
        """log p(M = m) + log p(tau | M = m) for any admissible tau."""
        return K.log_prior_mt(m, self.n, self.pp)

    def kernel_args(self):
        return self.y, self.cs, self.cs2, self.shift, self.pp, self.flat, self.k_max


def move_probabilities(m: int, k_max: int) -> dict[str, float]:
    """Dispatch probabilities of the four moves at ``m`` changepoints."""
    p_birth = K.p_birth(m, k_max)
    p_death = K.p_death(m, k_max)
    p_shift = p_death
    return {
        "resample": 1.0 - p_birth - p_death - p_shift,
        "shift": p_shift,
        "birth": p_birth,
        "death": p_death,
    }


def _bounds_array(state: ChainState, n: int) -> np.ndarray:
    return np.array(state.bounds(n), dtype=np.int64)


def birth_sites(state: ChainState, n: int) -> list[int]:
    """Indices where a new changepoint keeps every segment long enough."""
    b = state.bounds(n)
    sites: list[int] = []
    for lo, hi in zip(b[:-1], b[1:]):
        sites.extend(range(lo + MIN_SEGMENT_LENGTH, hi - MIN_SEGMENT_LENGTH + 1))
    return sites


def n_birth_sites(state: ChainState, n: int) -> int:
    return int(K.n_birth_sites(_bounds_array(state, n), state.m))


def log_accept_fixed_dim(old: ChainState, new: ChainState, target: Target) -> float:
    """Log acceptance ratio of a resample or shift move.

    Both proposals are symmetric, and the M and tau priors do not change,
    so only the likelihood and theta-prior of the segments contribute.
    """
    if old.m != new.m:
        raise ValueError("fixed-dimension move changed the number of changepoints")
    n = target.n
    bo, bn = old.bounds(n), new.bounds(n)
    total = 0.0
    for lo, hi, p in zip(bn[:-1], bn[1:], new.segments):
        lp = target.log_prior_segment(p)
        if lp == -math.inf:
            return -math.inf
        total += lp + target.loglik(lo, hi, p)
    for lo, hi, p in zip(bo[:-1], bo[1:], old.segments):
        total -= target.log_prior_segment(p) + target.loglik(lo, hi, p)
    return total


def _accept(log_alpha: float, rng: np.random.Generator) -> bool:
    # accept iff U <= alpha
    if log_alpha >= 0.0:
        return True
    if log_alpha == -math.inf or math.isnan(log_alpha):
        return False
    return rng.random() <= math.exp(log_alpha)


def _perturb(p: SegmentParams, noise) -> SegmentParams:
    return SegmentParams(p.mu + noise[0], p.sigma2 + noise[1], p.nu + noise[2])


def propose_resample(
    state: ChainState, rng: np.random.Generator, scales: Sequence[float]
) -> ChainState:
    noise = rng.normal(size=(len(state.segments), 3)) * np.asarray(scales)
    segs = tuple(_perturb(p, z) for p, z in zip(state.segments, noise.tolist()))
    return ChainState(state.tau, segs)


def move_resample_params(state, target, rng, scales) -> tuple[ChainState, bool]:
    """Gaussian random-walk update of every segment's (mu, sigma2, nu)."""
    proposal = propose_resample(state, rng, scales)
    if _accept(log_accept_fixed_dim(state, proposal, target), rng):
        return proposal, True
    return state, False


def propose_shift(state, rng, scales, lam, n) -> ChainState | None:
    """Poisson shift of one changepoint plus perturbation of its neighbours.

    Returns ``None`` when the shifted changepoint breaks the ordering or the
    minimum segment length.
    """
    if state.m == 0:
        raise ValueError("shift move needs at least one changepoint")
    i = int(rng.integers(state.m))
    step = int(rng.poisson(lam))
    if rng.random() < 0.5:
        step = -step
    noise = (rng.normal(size=(2, 3)) * np.asarray(scales)).tolist()
    b = state.bounds(n)
    t_new = b[i + 1] + step
    if t_new - b[i] < MIN_SEGMENT_LENGTH or b[i + 2] - t_new < MIN_SEGMENT_LENGTH:
        return None
    tau = list(state.tau)
    tau[i] = t_new
    segs = list(state.segments)
    segs[i] = _perturb(segs[i], noise[0])
    segs[i + 1] = _perturb(segs[i + 1], noise[1])
    return ChainState(tuple(tau), tuple(segs))


def move_shift_changepoint(state, target, rng, scales, lam) -> tuple[ChainState, bool]:
    proposal = propose_shift(state, rng, scales, lam, target.n)
    if proposal is None:
        return state, False
    if _accept(log_accept_fixed_dim(state, proposal, target), rng):
        return proposal, True
    return state, False


def segment_index(state: ChainState, t: int) -> int:
    """Index of the segment containing position ``t``."""
    return int(np.searchsorted(np.asarray(state.tau, dtype=int), t, side="right"))


def split_segment(state, t, left, right, u_nu) -> tuple[ChainState, int]:
    """Insert changepoint ``t`` with (mu, sigma2) ``left``/``right`` for the
    two halves; the split segment's ``nu`` becomes ``(nu + u_nu, nu - u_nu)``.

    Returns the new state and the index of the split segment.
    """
    j = segment_index(state, t)
    nu_l, nu_r = K.split_nu(state.segments[j].nu, float(u_nu))
    tau = state.tau[:j] + (int(t),) + state.tau[j:]
    segs = (
        state.segments[:j]
        + (SegmentParams(*left, nu_l), SegmentParams(*right, nu_r))
        + state.segments[j + 1 :]
    )
    return ChainState(tau, segs), j


def merge_segments(state, j, merged) -> ChainState:
    """Delete ``tau[j]``; segments j and j+1 become one with (mu, sigma2)
    ``merged`` and the mean of their degrees of freedom."""
    nu = 0.5 * (state.segments[j].nu + state.segments[j + 1].nu)
    tau = state.tau[:j] + state.tau[j + 1 :]
    segs = (
        state.segments[:j] + (SegmentParams(*merged, nu),) + state.segments[j + 2 :]
    )
    return ChainState(tau, segs)


def log_birth_ratio(small, big, j, target, scales) -> float:
    """Log acceptance ratio of the birth ``small -> big`` splitting segment j."""
    old = small.segments[j]
    pl, pr = big.segments[j], big.segments[j + 1]
    return K.log_birth_ratio(
        *target.kernel_args(),
        _bounds_array(small, target.n), small.m, j, big.tau[j],
        *old, *pl, *pr, *scales,
    )


def log_death_ratio(big, small, j, target, scales) -> float:
    """Log acceptance ratio of the death ``big -> small`` removing ``big.tau[j]``."""
    pl, pr = big.segments[j], big.segments[j + 1]
    return K.log_death_ratio(
        *target.kernel_args(),
        _bounds_array(big, target.n), big.m, j,
        *pl, *pr, *small.segments[j], *scales,
    )


def propose_birth(state, target, rng, scales) -> tuple[ChainState, int] | None:
    """Draw a split location and parameters; ``None`` if no site exists."""
    sites = birth_sites(state, target.n)
    if not sites:
        return None
    t = sites[int(rng.integers(len(sites)))]
    eps_mu, eps_s2, eps_nu = scales
    u = rng.normal(size=5).tolist()
    j = segment_index(state, t)
    b = state.bounds(target.n)
    mean_l, var_l = target.seg_stats(b[j], t)
    mean_r, var_r = target.seg_stats(t, b[j + 1])
    return split_segment(
        state,
        t,
        (mean_l + eps_mu * u[0], var_l + eps_s2 * u[1]),
        (mean_r + eps_mu * u[2], var_r + eps_s2 * u[3]),
        eps_nu * u[4],
    )


def move_birth(state, target, rng, scales) -> tuple[ChainState, bool]:
    if state.m >= target.k_max:
        raise ValueError("birth move dispatched at k_max")
    proposed = propose_birth(state, target, rng, scales)
    if proposed is None:
        return state, False
    big, j = proposed
    if _accept(log_birth_ratio(state, big, j, target, scales), rng):
        return big, True
    return state, False


def propose_death(state, target, rng, scales) -> tuple[ChainState, int]:
    j = int(rng.integers(state.m))
    eps_mu, eps_s2, _ = scales
    u = rng.normal(size=2).tolist()
    b = state.bounds(target.n)
    mean_m, var_m = target.seg_stats(b[j], b[j + 2])
    merged = (mean_m + eps_mu * u[0], var_m + eps_s2 * u[1])
    return merge_segments(state, j, merged), j


def move_death(state, target, rng, scales) -> tuple[ChainState, bool]:
    if state.m == 0:
        raise ValueError("death move dispatched with no changepoints")
    small, j = propose_death(state, target, rng, scales)
    if _accept(log_death_ratio(state, small, j, target, scales), rng):
        return small, True
    return state, False


def initial_state(target: Target) -> tuple[ChainState, bool]:
    """No changepoints and empirical segment parameters.

    ``nu`` is matched to the sample excess kurtosis (``6 / (nu - 4)``) and
    clipped to the prior support.  Also returns whether the variance floor
    was applied.
    """
    y = target.y
    mean, var = target.seg_stats(0, target.n)
    degenerate = var < SIGMA2_FLOOR
    pr = target.priors
    nu = pr.nu_high
    if not degenerate:
        c = y - mean
        excess = float(np.mean(c**4)) / float(np.mean(c**2)) ** 2 - 3.0
        if excess > 0:
            nu = 4.0 + 6.0 / excess
    nu = min(max(nu, pr.nu_low), pr.nu_high)
    return ChainState((), (SegmentParams(mean, max(var, SIGMA2_FLOOR), nu),)), degenerate


@dataclass
class ChainTrace:
    """States kept after burn-in and thinning, plus move bookkeeping."""

    samples: list[ChainState]
    iterations: list[int]
    n: int
    config: SamplerConfig
    scales: tuple[float, float, float]
    jump_scales: tuple[float, float, float]
    dispatched: dict[str, int] = field(default_factory=dict)
    accepted: dict[str, int] = field(default_factory=dict)
    birth_no_site: int = 0
    degenerate_init: bool = False
    tau_matrix: np.ndarray | None = field(default=None, repr=False)

    @property
    def acceptance_rates(self) -> dict[str, float | None]:
        return {
            mv: (self.accepted[mv] / self.dispatched[mv] if self.dispatched[mv] else None)
            for mv in MOVES
        }

    def m_values(self) -> np.ndarray:
        return np.array([s.m for s in self.samples], dtype=int)

    def diagnostics(self) -> dict:
        return {
            "dispatched": dict(self.dispatched),
            "accepted": dict(self.accepted),
            "rejected": {mv: self.dispatched[mv] - self.accepted[mv] for mv in MOVES},
            "acceptance_rates": self.acceptance_rates,
            "birth_no_site": self.birth_no_site,
            "degenerate_init": self.degenerate_init,
            "n_stored": len(self.samples),
            "scales": list(self.scales),
            "jump_scales": list(self.jump_scales),
            "config": asdict(self.config),
        }

    def write_jsonl(self, fh) -> None:
        """One JSON record per stored state."""
        for it, s in zip(self.iterations, self.samples):
            rec = {
                "iter": it,
                "m": s.m,
                "tau": list(s.tau),
                "segments": [
                    {"mu": p.mu, "sigma2": p.sigma2, "nu": p.nu} for p in s.segments
                ],
            }
            fh.write(json.dumps(rec) + "\n")


def run_chain(
    y,
    priors: PriorSpec | None = None,
    config: SamplerConfig | None = None,
    likelihood: str = "student_t",
    initial: ChainState | None = None,
) -> ChainTrace:
    """Run the reversible-jump chain on series ``y``.

    Parameters
    ----------
    y : array_like
        Log-difference series.
    priors : PriorSpec, optional
    config : SamplerConfig, optional
    likelihood : {"student_t", "flat"}
        ``"flat"`` samples the prior; used to validate the sampler.
    initial : ChainState, optional
        Starting state; defaults to :func:`initial_state`.

    Returns
    -------
    ChainTrace
        Deterministic given ``config.seed``.
    """
    config = config if config is not None else SamplerConfig()
    target = Target(y, priors, config.k_max, likelihood)
    if target.n < 2 * MIN_SEGMENT_LENGTH:
        raise ValueError(
            f"series of length {target.n} is too short; need >= {2 * MIN_SEGMENT_LENGTH}"
        )
    scales = config.scales_for(target.y)
    jump_scales = config.jump_scales_for(target.y, target.priors)
    if initial is None:
        state, degenerate = initial_state(target)
        if degenerate:
            logger.warning("zero-variance series; sigma2 floored at %g", SIGMA2_FLOOR)
    else:
        initial.validate(target.n, config.k_max)
        state, degenerate = initial, False

    theta0 = np.array(state.segments, dtype=float).reshape(-1, 3)
    out_m, out_tau, out_theta, dispatched, accepted, no_site = K.run(
        *target.kernel_args()[:6],
        config.k_max,
        config.iterations,
        config.burn_in,
        config.thin,
        *scales,
        *jump_scales,
        float(config.lam),
        int(config.seed) % 2**32,
        _bounds_array(state, target.n),
        theta0[:, 0].copy(),
        theta0[:, 1].copy(),
        theta0[:, 2].copy(),
    )
    samples = []
    for m, tau, theta in zip(out_m.tolist(), out_tau, out_theta):
        samples.append(
            ChainState(
                tuple(tau[:m].tolist()),
                tuple(SegmentParams(*row) for row in theta[: m + 1].tolist()),
            )
        )
    first = config.burn_in + config.thin
    return ChainTrace(
        samples=samples,
        iterations=list(range(first, first + config.thin * len(samples), config.thin)),
        n=target.n,
        config=config,
        scales=scales,
        jump_scales=jump_scales,
        dispatched=dict(zip(MOVES, dispatched.tolist())),
        accepted=dict(zip(MOVES, accepted.tolist())),
        birth_no_site=int(no_site),
        degenerate_init=degenerate,
        tau_matrix=out_tau,
    )
