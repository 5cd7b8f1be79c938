"""Compiled inner loops of the reversible-jump sampler.

Segment parameters live in three parallel arrays ``mu, s2, nu`` and segment
boundaries in ``b`` (``b[0] = 0``, ``b[m + 1] = n``).  Prior
hyperparameters are packed as
``pp = [mu_mean, mu_sd, s2_df, s2_scale, nu_low, nu_high, m_expected]``.
"""

import math

import numpy as np
from numba import njit

MIN_LEN = 2
LOG_2PI = math.log(2.0 * math.pi)
NEG_INF = -np.inf

RESAMPLE, SHIFT, BIRTH, DEATH = 0, 1, 2, 3


@njit(cache=True)
def seg_loglik(y, lo, hi, mu, s2, nu, flat):
    if flat:
        return 0.0
    c = math.lgamma(0.5 * (nu + 1.0)) - math.lgamma(0.5 * nu) - 0.5 * math.log(nu * math.pi * s2)
    inv = 1.0 / (s2 * nu)
    acc = 0.0
    for i in range(lo, hi):
        d = y[i] - mu
        acc += math.log1p(d * d * inv)
    return (hi - lo) * c - 0.5 * (nu + 1.0) * acc


@njit(cache=True)
def log_prior_seg(mu, s2, nu, pp):
    if not s2 > 0.0 or nu < pp[4] or nu > pp[5]:
        return NEG_INF
    z = (mu - pp[0]) / pp[1]
    half_df = 0.5 * pp[2]
    a = half_df * pp[3]
    return (
        -0.5 * z * z - 0.5 * LOG_2PI - math.log(pp[1])
        + half_df * math.log(a) - math.lgamma(half_df) - (half_df + 1.0) * math.log(s2) - a / s2
        - math.log(pp[5] - pp[4])
    )


@njit(cache=True)
def log_prior_mt(m, n, pp):
    """log p(M = m) + log p(tau | M = m), tau uniform over admissible sets."""
    trials = n - 1
    free = n - MIN_LEN * (m + 1)
    if m < 0 or m > trials or free < 0:
        return NEG_INF
    p = pp[6] / trials
    log_binom = (
        math.lgamma(trials + 1.0) - math.lgamma(m + 1.0) - math.lgamma(trials - m + 1.0)
        + m * math.log(p) + (trials - m) * math.log1p(-p)
    )
    log_count = math.lgamma(free + m + 1.0) - math.lgamma(m + 1.0) - math.lgamma(free + 1.0)
    return log_binom - log_count


@njit(cache=True)
def seg_stats(cs, cs2, shift, lo, hi):
    k = hi - lo
    s = cs[hi] - cs[lo]
    ss = cs2[hi] - cs2[lo]
    mean = s / k
    var = (ss - s * mean) / (k - 1)
    if var < 0.0:
        var = 0.0
    return mean + shift, var


@njit(cache=True)
def log_normal(x, sd):
    z = x / sd
    return -0.5 * z * z - math.log(sd) - 0.5 * LOG_2PI


@njit(cache=True)
def sites_in(length):
    k = length - 2 * MIN_LEN + 1
    return k if k > 0 else 0


@njit(cache=True)
def n_birth_sites(b, m):
    total = 0
    for l in range(m + 1):
        total += sites_in(b[l + 1] - b[l])
    return total


@njit(cache=True)
def p_birth(m, k_max):
    if m >= k_max:
        return 0.0
    if m == 0:
        return 0.5
    return 0.25


@njit(cache=True)
def p_death(m, k_max):
    if m == 0:
        return 0.0
    if m == k_max:
        return 1.0 / 3.0
    return 0.25


@njit(cache=True)
def log_birth_ratio(y, cs, cs2, shift, pp, flat, k_max,
                    b, m, j, t,
                    mu_o, s2_o, nu_o,
                    mu_l, s2_l, nu_l, mu_r, s2_r, nu_r,
                    eps_mu, eps_s2, eps_nu):
    """Birth inserting ``t`` into segment ``j`` of the state with bounds ``b``."""
    n = y.shape[0]
    lo = b[j]
    hi = b[j + 1]
    lp_l = log_prior_seg(mu_l, s2_l, nu_l, pp)
    lp_r = log_prior_seg(mu_r, s2_r, nu_r, pp)
    if lp_l == NEG_INF or lp_r == NEG_INF:
        return NEG_INF
    log_target = (
        seg_loglik(y, lo, t, mu_l, s2_l, nu_l, flat)
        + seg_loglik(y, t, hi, mu_r, s2_r, nu_r, flat)
        - seg_loglik(y, lo, hi, mu_o, s2_o, nu_o, flat)
        + lp_l + lp_r - log_prior_seg(mu_o, s2_o, nu_o, pp)
        + log_prior_mt(m + 1, n, pp) - log_prior_mt(m, n, pp)
    )
    mean_l, var_l = seg_stats(cs, cs2, shift, lo, t)
    mean_r, var_r = seg_stats(cs, cs2, shift, t, hi)
    mean_m, var_m = seg_stats(cs, cs2, shift, lo, hi)
    log_q_forward = (
        math.log(p_birth(m, k_max)) - math.log(n_birth_sites(b, m))
        + log_normal(mu_l - mean_l, eps_mu) + log_normal(s2_l - var_l, eps_s2)
        + log_normal(mu_r - mean_r, eps_mu) + log_normal(s2_r - var_r, eps_s2)
        + log_normal(0.5 * (nu_l - nu_r), eps_nu)
    )
    log_q_reverse = (
        math.log(p_death(m + 1, k_max)) - math.log(m + 1.0)
        + log_normal(mu_o - mean_m, eps_mu) + log_normal(s2_o - var_m, eps_s2)
    )
    return log_target + log_q_reverse - log_q_forward + math.log(2.0)


@njit(cache=True)
def log_death_ratio(y, cs, cs2, shift, pp, flat, k_max,
                    b, m, j,
                    mu_l, s2_l, nu_l, mu_r, s2_r, nu_r,
                    mu_n, s2_n, nu_n,
                    eps_mu, eps_s2, eps_nu):
    """Death removing changepoint ``b[j + 1]`` from the state with bounds ``b``."""
    n = y.shape[0]
    lo = b[j]
    t = b[j + 1]
    hi = b[j + 2]
    lp_n = log_prior_seg(mu_n, s2_n, nu_n, pp)
    if lp_n == NEG_INF:
        return NEG_INF
    log_target = (
        seg_loglik(y, lo, hi, mu_n, s2_n, nu_n, flat)
        - seg_loglik(y, lo, t, mu_l, s2_l, nu_l, flat)
        - seg_loglik(y, t, hi, mu_r, s2_r, nu_r, flat)
        + lp_n - log_prior_seg(mu_l, s2_l, nu_l, pp) - log_prior_seg(mu_r, s2_r, nu_r, pp)
        + log_prior_mt(m - 1, n, pp) - log_prior_mt(m, n, pp)
    )
    mean_l, var_l = seg_stats(cs, cs2, shift, lo, t)
    mean_r, var_r = seg_stats(cs, cs2, shift, t, hi)
    mean_m, var_m = seg_stats(cs, cs2, shift, lo, hi)
    sites_after = n_birth_sites(b, m) - sites_in(t - lo) - sites_in(hi - t) + sites_in(hi - lo)
    log_q_forward = (
        math.log(p_death(m, k_max)) - math.log(m)
        + log_normal(mu_n - mean_m, eps_mu) + log_normal(s2_n - var_m, eps_s2)
    )
    log_q_reverse = (
        math.log(p_birth(m - 1, k_max)) - math.log(sites_after)
        + log_normal(mu_l - mean_l, eps_mu) + log_normal(s2_l - var_l, eps_s2)
        + log_normal(mu_r - mean_r, eps_mu) + log_normal(s2_r - var_r, eps_s2)
        + log_normal(0.5 * (nu_l - nu_r), eps_nu)
    )
    return log_target + log_q_reverse - log_q_forward + math.log(0.5)


@njit(cache=True)
def split_nu(nu, u):
    """(nu + u, nu - u), with the smaller value taken as ``2 nu - larger`` so
    that averaging the pair gives back ``nu`` exactly."""
    big = nu + abs(u)
    small = 2.0 * nu - big
    if u >= 0.0:
        return big, small
    return small, big


@njit(cache=True)
def _accept(log_alpha):
    if log_alpha >= 0.0:
        return True
    if log_alpha == NEG_INF or log_alpha != log_alpha:
        return False
    return np.random.random() <= math.exp(log_alpha)


@njit(cache=True)
def run(y, cs, cs2, shift, pp, flat, k_max, iterations, burn, thin,
        eps_mu, eps_s2, eps_nu, jmu, js2, jnu, lam, seed, b0, mu0, s20, nu0):
    np.random.seed(seed)
    n_store = (iterations - burn) // thin
    out_m = np.zeros(n_store, np.int64)
    out_tau = np.full((n_store, k_max), -1, np.int64)
    out_theta = np.full((n_store, k_max + 1, 3), np.nan)
    dispatched = np.zeros(4, np.int64)
    accepted = np.zeros(4, np.int64)
    no_site = 0

    m = b0.shape[0] - 2
    b = np.zeros(k_max + 2, np.int64)
    mu = np.zeros(k_max + 1)
    s2 = np.zeros(k_max + 1)
    nu = np.zeros(k_max + 1)
    ll = np.zeros(k_max + 1)
    lp = np.zeros(k_max + 1)
    b[: m + 2] = b0
    mu[: m + 1] = mu0
    s2[: m + 1] = s20
    nu[: m + 1] = nu0
    for l in range(m + 1):
        ll[l] = seg_loglik(y, b[l], b[l + 1], mu[l], s2[l], nu[l], flat)
        lp[l] = log_prior_seg(mu[l], s2[l], nu[l], pp)

    nmu = np.zeros(k_max + 1)
    ns2 = np.zeros(k_max + 1)
    nnu = np.zeros(k_max + 1)
    nll = np.zeros(k_max + 1)
    nlp = np.zeros(k_max + 1)
    k_store = 0

    for it in range(iterations):
        if m == 0:
            move = RESAMPLE if np.random.random() < 0.5 else BIRTH
        elif m == k_max:
            r = np.random.randint(0, 3)
            move = RESAMPLE if r == 0 else (SHIFT if r == 1 else DEATH)
        else:
            move = np.random.randint(0, 4)
        dispatched[move] += 1
        ok = False

        if move == RESAMPLE:
            for l in range(m + 1):
                nmu[l] = mu[l] + eps_mu * np.random.normal()
                ns2[l] = s2[l] + eps_s2 * np.random.normal()
                nnu[l] = nu[l] + eps_nu * np.random.normal()
            in_support = True
            for l in range(m + 1):
                nlp[l] = log_prior_seg(nmu[l], ns2[l], nnu[l], pp)
                if nlp[l] == NEG_INF:
                    in_support = False
                    break
            log_alpha = NEG_INF
            if in_support:
                log_alpha = 0.0
                for l in range(m + 1):
                    nll[l] = seg_loglik(y, b[l], b[l + 1], nmu[l], ns2[l], nnu[l], flat)
                    log_alpha += nll[l] + nlp[l] - ll[l] - lp[l]
            if _accept(log_alpha):
                ok = True
                for l in range(m + 1):
                    mu[l] = nmu[l]
                    s2[l] = ns2[l]
                    nu[l] = nnu[l]
                    ll[l] = nll[l]
                    lp[l] = nlp[l]

        elif move == SHIFT:
            i = np.random.randint(0, m)
            step = np.random.poisson(lam)
            if np.random.random() < 0.5:
                step = -step
            for q in range(2):
                nmu[q] = mu[i + q] + eps_mu * np.random.normal()
                ns2[q] = s2[i + q] + eps_s2 * np.random.normal()
                nnu[q] = nu[i + q] + eps_nu * np.random.normal()
            t_new = b[i + 1] + step
            if t_new - b[i] >= MIN_LEN and b[i + 2] - t_new >= MIN_LEN:
                nlp[0] = log_prior_seg(nmu[0], ns2[0], nnu[0], pp)
                nlp[1] = log_prior_seg(nmu[1], ns2[1], nnu[1], pp)
                if nlp[0] != NEG_INF and nlp[1] != NEG_INF:
                    nll[0] = seg_loglik(y, b[i], t_new, nmu[0], ns2[0], nnu[0], flat)
                    nll[1] = seg_loglik(y, t_new, b[i + 2], nmu[1], ns2[1], nnu[1], flat)
                    log_alpha = (nll[0] + nll[1] + nlp[0] + nlp[1]
                                 - ll[i] - ll[i + 1] - lp[i] - lp[i + 1])
                    if _accept(log_alpha):
                        ok = True
                        b[i + 1] = t_new
                        for q in range(2):
                            mu[i + q] = nmu[q]
                            s2[i + q] = ns2[q]
                            nu[i + q] = nnu[q]
                            ll[i + q] = nll[q]
                            lp[i + q] = nlp[q]

        elif move == BIRTH:
            n_sites = n_birth_sites(b, m)
            if n_sites == 0:
                no_site += 1
            else:
                k = np.random.randint(0, n_sites)
                j = 0
                while True:
                    c = sites_in(b[j + 1] - b[j])
                    if k < c:
                        break
                    k -= c
                    j += 1
                t = b[j] + MIN_LEN + k
                mean_l, var_l = seg_stats(cs, cs2, shift, b[j], t)
                mean_r, var_r = seg_stats(cs, cs2, shift, t, b[j + 1])
                mu_l = mean_l + jmu * np.random.normal()
                s2_l = var_l + js2 * np.random.normal()
                mu_r = mean_r + jmu * np.random.normal()
                s2_r = var_r + js2 * np.random.normal()
                nu_l, nu_r = split_nu(nu[j], jnu * np.random.normal())
                log_alpha = log_birth_ratio(
                    y, cs, cs2, shift, pp, flat, k_max, b, m, j, t,
                    mu[j], s2[j], nu[j], mu_l, s2_l, nu_l, mu_r, s2_r, nu_r,
                    jmu, js2, jnu)
                if _accept(log_alpha):
                    ok = True
                    for l in range(m, j, -1):
                        mu[l + 1] = mu[l]
                        s2[l + 1] = s2[l]
                        nu[l + 1] = nu[l]
                        ll[l + 1] = ll[l]
                        lp[l + 1] = lp[l]
                    for l in range(m + 1, j, -1):
                        b[l + 1] = b[l]
                    b[j + 1] = t
                    mu[j], s2[j], nu[j] = mu_l, s2_l, nu_l
                    mu[j + 1], s2[j + 1], nu[j + 1] = mu_r, s2_r, nu_r
                    ll[j] = seg_loglik(y, b[j], t, mu_l, s2_l, nu_l, flat)
                    ll[j + 1] = seg_loglik(y, t, b[j + 2], mu_r, s2_r, nu_r, flat)
                    lp[j] = log_prior_seg(mu_l, s2_l, nu_l, pp)
                    lp[j + 1] = log_prior_seg(mu_r, s2_r, nu_r, pp)
                    m += 1

        else:
            j = np.random.randint(0, m)
            mean_m, var_m = seg_stats(cs, cs2, shift, b[j], b[j + 2])
            mu_n = mean_m + jmu * np.random.normal()
            s2_n = var_m + js2 * np.random.normal()
            nu_n = 0.5 * (nu[j] + nu[j + 1])
            log_alpha = log_death_ratio(
                y, cs, cs2, shift, pp, flat, k_max, b, m, j,
                mu[j], s2[j], nu[j], mu[j + 1], s2[j + 1], nu[j + 1],
                mu_n, s2_n, nu_n, jmu, js2, jnu)
            if _accept(log_alpha):
                ok = True
                mu[j], s2[j], nu[j] = mu_n, s2_n, nu_n
                ll[j] = seg_loglik(y, b[j], b[j + 2], mu_n, s2_n, nu_n, flat)
                lp[j] = log_prior_seg(mu_n, s2_n, nu_n, pp)
                for l in range(j + 1, m):
                    mu[l] = mu[l + 1]
                    s2[l] = s2[l + 1]
                    nu[l] = nu[l + 1]
                    ll[l] = ll[l + 1]
                    lp[l] = lp[l + 1]
                for l in range(j + 1, m + 1):
                    b[l] = b[l + 1]
                m -= 1

        if ok:
            accepted[move] += 1
        if it >= burn and (it - burn + 1) % thin == 0:
            out_m[k_store] = m
            for l in range(m):
                out_tau[k_store, l] = b[l + 1]
            for l in range(m + 1):
                out_theta[k_store, l, 0] = mu[l]
                out_theta[k_store, l, 1] = s2[l]
                out_theta[k_store, l, 2] = nu[l]
            k_store += 1

    return out_m, out_tau, out_theta, dispatched, accepted, no_site
