import io
import json
import math

import numpy as np
import pytest
from scipy import stats

from airwaycpd import _kernels as K
from airwaycpd import rjmh_sampler as rj
from airwaycpd.posterior_analysis import pooled_histogram
from airwaycpd.segment_model import (
    ChainState,
    PriorSpec,
    SegmentParams,
    log_prior,
    segment_loglik,
)
from oracles import GridEvidence, total_variation


def step_signal(seed=0):
    rng = np.random.default_rng(seed)
    return np.r_[np.zeros(50), np.full(50, 3.0)] + 0.1 * rng.standard_t(10, 100)


@pytest.fixture(scope="module")
def step_trace():
    return rj.run_chain(step_signal(), config=rj.SamplerConfig(iterations=50_000, seed=3))


# -- configuration ------------------------------------------------------------

def test_stored_count():
    cfg = rj.SamplerConfig(iterations=1000, burn_in_fraction=0.25, thin=5)
    assert cfg.n_stored == 150
    trace = rj.run_chain(np.random.default_rng(0).normal(size=30), config=cfg)
    assert len(trace.samples) == 150
    assert trace.iterations[0] == 255 and trace.iterations[-1] == 1000


@pytest.mark.parametrize("kw", [
    {"iterations": 0}, {"burn_in_fraction": 1.0}, {"burn_in_fraction": -0.1}, {"thin": 0},
    {"k_max": 0}, {"lam": 0.0}, {"seed": -1}, {"epsilon": 0.0}, {"epsilon": (0.1, 0.1)},
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        rj.SamplerConfig(**kw)


def test_scalar_epsilon_applies_to_all():
    assert rj.SamplerConfig(epsilon=0.1).scales_for(np.zeros(5)) == (0.1, 0.1, 0.1)


def test_explicit_epsilon_shared_by_jumps():
    cfg = rj.SamplerConfig(epsilon=(0.2, 0.3, 4.0))
    assert cfg.jump_scales_for(np.zeros(5)) == (0.2, 0.3, 4.0)
    cfg = rj.SamplerConfig(epsilon=0.2, jump_epsilon=(1.0, 2.0, 3.0))
    assert cfg.jump_scales_for(np.zeros(5)) == (1.0, 2.0, 3.0)
    with pytest.raises(ValueError):
        rj.SamplerConfig(jump_epsilon=-1.0)


def test_default_jump_scales_cover_prior_spread():
    pr = PriorSpec()
    quiet = 0.01 * np.random.default_rng(0).standard_normal(100)
    mu, s2, nu = rj.default_jump_scales(quiet, pr)
    assert mu == pytest.approx(0.4)
    # standard deviation of the scaled inverse chi-square prior on sigma2
    assert s2 == pytest.approx(stats.invgamma(2.5, scale=2.5 * 0.16).std())
    assert nu == rj.AUTO_EPS_NU
    noisy = 5.0 * np.random.default_rng(0).standard_normal(100)
    assert rj.default_jump_scales(noisy, pr)[:2] == rj.default_scales(noisy)[:2]


def test_series_too_short():
    with pytest.raises(ValueError):
        rj.run_chain([1.0, 2.0, 3.0])


def test_degenerate_series_flagged():
    trace = rj.run_chain(np.full(20, 0.5), config=rj.SamplerConfig(iterations=2000))
    assert trace.degenerate_init
    assert all(s.segments[0].sigma2 > 0 for s in trace.samples)


# -- move dispatch --------------------------------------------------------

@pytest.mark.parametrize("m,k_max,expected", [
    (0, 3, {"resample": 0.5, "shift": 0.0, "birth": 0.5, "death": 0.0}),
    (1, 3, {"resample": 0.25, "shift": 0.25, "birth": 0.25, "death": 0.25}),
    (3, 3, {"resample": 1 / 3, "shift": 1 / 3, "birth": 0.0, "death": 1 / 3}),
])
def test_move_probabilities(m, k_max, expected):
    got = rj.move_probabilities(m, k_max)
    assert got == pytest.approx(expected)


def test_jacobians():
    assert rj.BIRTH_JACOBIAN == 2.0
    assert rj.DEATH_JACOBIAN == 0.5


# -- kernels agree with the reference numpy code ---------------------------

def test_kernel_loglik_and_prior_match_reference():
    rng = np.random.default_rng(1)
    y = rng.normal(size=40)
    pr = PriorSpec()
    target = rj.Target(y, pr)
    for _ in range(50):
        lo = int(rng.integers(0, 30))
        hi = int(rng.integers(lo + 2, 41))
        p = SegmentParams(float(rng.normal()), float(rng.uniform(0.01, 3)),
                          float(rng.uniform(2, 100)))
        assert target.loglik(lo, hi, p) == pytest.approx(segment_loglik(y[lo:hi], p), rel=1e-12)
        assert target.log_prior_segment(p) == pytest.approx(pr.log_prior_segment(p), rel=1e-12)
        mean, var = target.seg_stats(lo, hi)
        assert mean == pytest.approx(y[lo:hi].mean(), abs=1e-12)
        assert var == pytest.approx(y[lo:hi].var(ddof=1), rel=1e-10)
    for m in range(5):
        assert target.log_prior_mt(m) == pytest.approx(
            pr.log_prior_m(m, 40) + pr.log_prior_tau(m, 40))


# -- resample move --------------------------------------------------------

def test_identity_proposal_accepted():
    y = np.random.default_rng(0).normal(size=20)
    target = rj.Target(y)
    s = ChainState((8,), (SegmentParams(0, 1, 5), SegmentParams(0.5, 1, 5)))
    assert rj.log_accept_fixed_dim(s, s, target) == 0.0
    new, ok = rj.move_resample_params(s, target, np.random.default_rng(0), (0.0, 0.0, 0.0))
    assert ok and new == s


def test_resample_outside_support_rejected():
    target = rj.Target(np.zeros(10) + np.arange(10) * 0.1)
    s = ChainState((), (SegmentParams(0.5, 1, 2.2),))
    bad = ChainState((), (SegmentParams(0.5, 1, 1.5),))
    assert rj.log_accept_fixed_dim(s, bad, target) == -math.inf


def test_resample_acceptance_rate_two_points():
    # m=0 on a two-point series: compare the move's acceptance frequency
    # with a direct Monte-Carlo average of min(1, alpha)
    y = np.array([0.2, -0.4])
    pr = PriorSpec()
    s = ChainState((), (SegmentParams(-0.1, 0.3, 8.0),))
    scales = (0.3, 0.2, 5.0)
    target = rj.Target(y, pr)

    def log_post(p):
        lp = pr.log_prior_segment(p)
        return lp if lp == -math.inf else lp + float(
            stats.t.logpdf(y, p.nu, p.mu, math.sqrt(p.sigma2)).sum())

    rng = np.random.default_rng(11)
    z = rng.normal(size=(200_000, 3)) * scales
    base = log_post(s.segments[0])
    alpha = np.array([min(1.0, math.exp(min(0.0, log_post(SegmentParams(
        -0.1 + a, 0.3 + b, 8.0 + c)) - base))) for a, b, c in z[:20_000]])
    expected = alpha.mean()

    rng = np.random.default_rng(5)
    hits = sum(rj.move_resample_params(s, target, rng, scales)[1] for _ in range(10_000))
    assert hits / 10_000 == pytest.approx(expected, abs=0.02)


# -- shift move -----------------------------------------------------------

class _FixedRng:
    """Stand-in generator returning scripted draws."""

    def __init__(self, index=0, step=0, sign=0.9, normals=None):
        self._index, self._step, self._sign = index, step, sign
        self._normals = normals

    def integers(self, k):
        return self._index

    def poisson(self, lam):
        return self._step

    def random(self):
        return self._sign

    def normal(self, size):
        return np.zeros(size) if self._normals is None else self._normals


def test_shift_identity_accepted():
    y = step_signal()
    target = rj.Target(y)
    s = ChainState((50,), (SegmentParams(0, 0.01, 10), SegmentParams(3, 0.01, 10)))
    new, ok = rj.move_shift_changepoint(s, target, _FixedRng(step=0), (0.1, 0.1, 1), 1.0)
    assert ok and new == s


def test_shift_out_of_bounds_rejected():
    s = ChainState((5,), (SegmentParams(0, 1, 10),) * 2)
    # sign draw < 0.5 makes the step negative
    assert rj.propose_shift(s, _FixedRng(step=10, sign=0.1), (0.1,) * 3, 1.0, 50) is None
    target = rj.Target(np.random.default_rng(0).normal(size=50))
    new, ok = rj.move_shift_changepoint(s, target, _FixedRng(step=10, sign=0.1), (0.1,) * 3, 1.0)
    assert not ok and new is s


def test_shift_requires_changepoint():
    with pytest.raises(ValueError):
        rj.propose_shift(ChainState((), (SegmentParams(0, 1, 3),)), np.random.default_rng(),
                         (0.1,) * 3, 1.0, 20)


def test_shift_only_chain_matches_tau_oracle():
    """M pinned at 1, resample + shift only: posterior of tau against grid
    enumeration of the single-changepoint model."""
    y = step_signal(seed=4)[30:70]  # step at index 20 of 40
    n = y.size
    ev = GridEvidence(y)
    ts = np.arange(2, n - 1)
    logp = np.array([ev.log_z(0, t) + ev.log_z(t, n) for t in ts])
    oracle = np.zeros(n)
    oracle[ts] = np.exp(logp - logp.max())
    oracle /= oracle.sum()

    target = rj.Target(y)
    rng = np.random.default_rng(9)
    scales = rj.default_scales(y)
    s = ChainState((10,), (SegmentParams(0, 0.01, 10), SegmentParams(3, 0.01, 10)))
    counts = np.zeros(n)
    for it in range(20_000):
        if rng.random() < 0.5:
            s, _ = rj.move_resample_params(s, target, rng, scales)
        else:
            s, _ = rj.move_shift_changepoint(s, target, rng, scales, 1.0)
        if it >= 2000:
            counts[s.tau[0]] += 1
    assert total_variation(counts / counts.sum(), oracle) < 0.1


# -- birth / death ---------------------------------------------------------

def test_nu_split_merge_exact():
    for nu, u in [(10.0, 3.3), (2.5, -0.4), (99.0, 0.7), (51.123456789, -12.5)]:
        a, b = K.split_nu(nu, u)
        assert a + b == 2 * nu
        assert 0.5 * (a + b) == nu
    assert 0.5 * (10.0 + 10.0) == 10.0


def test_merge_equal_nu():
    s = ChainState((5,), (SegmentParams(0, 1, 10.0), SegmentParams(1, 1, 10.0)))
    assert rj.merge_segments(s, 0, (0.5, 1.0)).segments[0].nu == 10.0


def test_birth_ratio_includes_jacobian_and_move_ratio():
    """Rebuild the birth ratio from reference densities, term by term."""
    rng = np.random.default_rng(3)
    y = rng.normal(size=30)
    pr = PriorSpec()
    k_max = 3
    target = rj.Target(y, pr, k_max=k_max)
    scales = (0.2, 0.1, 4.0)
    small = ChainState((12,), (SegmentParams(0.1, 0.9, 20.0), SegmentParams(-0.2, 1.1, 30.0)))
    big, j = rj.split_segment(small, 20, (-0.1, 0.8), (-0.3, 1.2), 2.5)
    n = y.size

    def post(s):
        return log_prior(s, pr, n) + sum(
            segment_loglik(y[lo:hi], p)
            for lo, hi, p in zip(s.bounds(n)[:-1], s.bounds(n)[1:], s.segments))

    lo, hi = 12, 30
    ml, vl = y[lo:20].mean(), y[lo:20].var(ddof=1)
    mr, vr = y[20:hi].mean(), y[20:hi].var(ddof=1)
    mm, vm = y[lo:hi].mean(), y[lo:hi].var(ddof=1)
    pl, pr_ = big.segments[1], big.segments[2]
    q_fwd = (math.log(rj.move_probabilities(1, k_max)["birth"])
             - math.log(len(rj.birth_sites(small, n)))
             + stats.norm.logpdf(pl.mu - ml, 0, scales[0])
             + stats.norm.logpdf(pl.sigma2 - vl, 0, scales[1])
             + stats.norm.logpdf(pr_.mu - mr, 0, scales[0])
             + stats.norm.logpdf(pr_.sigma2 - vr, 0, scales[1])
             + stats.norm.logpdf(2.5, 0, scales[2]))
    q_rev = (math.log(rj.move_probabilities(2, k_max)["death"]) - math.log(2)
             + stats.norm.logpdf(small.segments[1].mu - mm, 0, scales[0])
             + stats.norm.logpdf(small.segments[1].sigma2 - vm, 0, scales[1]))
    expected = post(big) - post(small) + q_rev - q_fwd + math.log(2.0)
    assert rj.log_birth_ratio(small, big, j, target, scales) == pytest.approx(expected, abs=1e-9)
    assert rj.log_death_ratio(big, small, j, target, scales) == pytest.approx(-expected, abs=1e-9)


def test_birth_without_site_counts_as_reject():
    y = np.arange(4.0)
    target = rj.Target(y, k_max=3)
    s = ChainState((2,), (SegmentParams(0, 1, 3), SegmentParams(2, 1, 3)))
    assert rj.birth_sites(s, 4) == []
    new, ok = rj.move_birth(s, target, np.random.default_rng(), (0.1, 0.1, 1))
    assert not ok and new is s


def test_birth_sites_cover_admissible_indices():
    s = ChainState((4, 9), (SegmentParams(0, 1, 3),) * 3)
    assert rj.birth_sites(s, 14) == [2, 6, 7, 11, 12]
    assert rj.n_birth_sites(s, 14) == 5


def test_move_contracts():
    target = rj.Target(np.arange(10.0), k_max=1)
    s0 = ChainState((), (SegmentParams(0, 1, 3),))
    s1 = ChainState((5,), (SegmentParams(0, 1, 3),) * 2)
    with pytest.raises(ValueError):
        rj.move_death(s0, target, np.random.default_rng(), (0.1,) * 3)
    with pytest.raises(ValueError):
        rj.move_birth(s1, target, np.random.default_rng(), (0.1,) * 3)


# -- whole chain ------------------------------------------------------------

def test_deterministic_given_seed():
    y = step_signal()
    cfg = rj.SamplerConfig(iterations=5000, seed=42)
    a, b = rj.run_chain(y, config=cfg), rj.run_chain(y, config=cfg)
    assert a.samples == b.samples
    assert a.accepted == b.accepted
    c = rj.run_chain(y, config=rj.SamplerConfig(iterations=5000, seed=43))
    assert c.samples != a.samples


def test_stored_states_valid(step_trace):
    n = step_trace.n
    for s in step_trace.samples:
        s.validate(n, k_max=10)
        assert all(2 <= t <= n - 2 for t in s.tau)
        for p in s.segments:
            assert p.sigma2 > 0 and 2 <= p.nu <= 100


def test_bookkeeping(step_trace):
    d = step_trace.diagnostics()
    for mv in rj.MOVES:
        assert d["accepted"][mv] + d["rejected"][mv] == d["dispatched"][mv]
    assert sum(d["dispatched"].values()) == step_trace.config.iterations


def test_step_signal_posterior(step_trace):
    m = step_trace.m_values()
    assert np.bincount(m).argmax() == 1
    hist = pooled_histogram(step_trace)
    assert hist.mass[48:53].sum() > 0.8


def test_trace_jsonl(step_trace):
    buf = io.StringIO()
    step_trace.write_jsonl(buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == len(step_trace.samples)
    rec = json.loads(lines[0])
    assert set(rec) == {"iter", "m", "tau", "segments"}
    assert len(rec["segments"]) == rec["m"] + 1
    assert set(rec["segments"][0]) == {"mu", "sigma2", "nu"}


def test_custom_initial_state():
    y = step_signal()
    init = ChainState((50,), (SegmentParams(0, 0.01, 10), SegmentParams(3, 0.01, 10)))
    trace = rj.run_chain(y, config=rj.SamplerConfig(iterations=2000), initial=init)
    assert len(trace.samples) == 300
