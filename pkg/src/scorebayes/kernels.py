"""Hot numeric kernels.

Each kernel exists twice: a numba-compiled loop (``*_nb``) and a pure-numpy
twin (``*_np``).  The public wrappers dispatch on :data:`_accel.USE_NUMBA`.
Both paths consume random numbers identically, so seeded output does not
depend on the backend.
"""
import math

import numpy as np

from . import _accel
from ._accel import njit

# Series/continued-fraction switch point for I1/I0.
BESSEL_SWITCH = 20.0
_SERIES_TERMS = 90
_CF_TOL = 1e-16
_CF_MAXIT = 100_000
_TINY = 1e-300


# ---------------------------------------------------------------------------
# Bessel ratio A1(k) = I1(k) / I0(k)
# ---------------------------------------------------------------------------


@njit
def _a1_scalar_nb(x):
    if x == 0.0:
        return 0.0
    if x < BESSEL_SWITCH:
        q = 0.25 * x * x
        t0 = 1.0
        t1 = 1.0
        s0 = 1.0
        s1 = 1.0
        for k in range(1, _SERIES_TERMS):
            t0 *= q / (k * k)
            t1 *= q / (k * (k + 1))
            s0 += t0
            s1 += t1
            if t0 < 1e-18 * s0:
                break
        return 0.5 * x * s1 / s0
    # modified Lentz on 1 / (2/x + 1 / (4/x + 1 / (6/x + ...)))
    f = _TINY
    c = f
    d = 0.0
    for k in range(1, _CF_MAXIT):
        b = 2.0 * k / x
        d = b + d
        if d == 0.0:
            d = _TINY
        c = b + 1.0 / c
        if c == 0.0:
            c = _TINY
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < _CF_TOL:
            break
    return f


@njit
def a1_array_nb(x):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = _a1_scalar_nb(x[i])
    return out


def a1_array_np(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    small = (x > 0.0) & (x < BESSEL_SWITCH)
    if small.any():
        xs = x[small]
        q = 0.25 * xs * xs
        t0 = np.ones_like(xs)
        t1 = np.ones_like(xs)
        s0 = np.ones_like(xs)
        s1 = np.ones_like(xs)
        for k in range(1, _SERIES_TERMS):
            t0 = t0 * q / (k * k)
            t1 = t1 * q / (k * (k + 1))
            s0 += t0
            s1 += t1
            if np.all(t0 < 1e-18 * s0):
                break
        out[small] = 0.5 * xs * s1 / s0
    large = x >= BESSEL_SWITCH
    if large.any():
        xl = x[large]
        f = np.full_like(xl, _TINY)
        c = f.copy()
        d = np.zeros_like(xl)
        active = np.ones(xl.shape, dtype=bool)
        for k in range(1, _CF_MAXIT):
            b = 2.0 * k / xl[active]
            dk = b + d[active]
            dk[dk == 0.0] = _TINY
            ck = b + 1.0 / c[active]
            ck[ck == 0.0] = _TINY
            dk = 1.0 / dk
            delta = ck * dk
            f[active] *= delta
            d[active] = dk
            c[active] = ck
            done = np.abs(delta - 1.0) < _CF_TOL
            idx = np.flatnonzero(active)
            active[idx[done]] = False
            if not active.any():
                break
        out[large] = f
    return out


def a1_array(x):
    x = np.ascontiguousarray(x, dtype=float)
    if _accel.USE_NUMBA:
        return a1_array_nb(x)
    return a1_array_np(x)


# ---------------------------------------------------------------------------
# Best-Fisher von Mises rejection sampler
# ---------------------------------------------------------------------------


def best_fisher_r(kappa):
    """Wrapped-Cauchy envelope parameter ``r``, stable for small kappa."""
    s = math.sqrt(1.0 + 4.0 * kappa * kappa)
    tau = 1.0 + s
    # tau - sqrt(2 tau) rewritten without cancellation
    tau_m2 = 4.0 * kappa * kappa / (s + 1.0)
    rho = tau * tau_m2 / (tau + math.sqrt(2.0 * tau)) / (2.0 * kappa)
    return (1.0 + rho * rho) / (2.0 * rho)


@njit
def vonmises_fill_nb(u, out, filled, kappa, r, mu):
    n = out.shape[0]
    for j in range(u.shape[0]):
        if filled >= n:
            break
        z = math.cos(math.pi * u[j, 0])
        f = (1.0 + r * z) / (r + z)
        c = kappa * (r - f)
        u2 = u[j, 1]
        ok = c * (2.0 - c) - u2 > 0.0
        if not ok:
            ok = math.log(c / u2) + 1.0 - c >= 0.0
        if ok:
            f = min(1.0, max(-1.0, f))
            t = math.acos(f)
            if u[j, 2] < 0.5:
                t = -t
            t = t + mu
            t = (t + math.pi) % (2.0 * math.pi) - math.pi
            out[filled] = t
            filled += 1
    return filled


def vonmises_fill_np(u, out, filled, kappa, r, mu):
    need = out.shape[0] - filled
    if need <= 0:
        return filled
    z = np.cos(np.pi * u[:, 0])
    f = (1.0 + r * z) / (r + z)
    c = kappa * (r - f)
    u2 = u[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = (c * (2.0 - c) - u2 > 0.0) | (np.log(c / u2) + 1.0 - c >= 0.0)
    idx = np.flatnonzero(ok)[:need]
    t = np.arccos(np.clip(f[idx], -1.0, 1.0))
    t = np.where(u[idx, 2] < 0.5, -t, t) + mu
    t = np.mod(t + np.pi, 2.0 * np.pi) - np.pi
    out[filled:filled + idx.size] = t
    return filled + idx.size


def sample_vonmises_angles(rng, n, mu, kappa, block=None):
    """Draw ``n`` von Mises angles in [-pi, pi) from generator ``rng``."""
    if n == 0:
        return np.empty(0)
    if kappa == 0.0:
        return rng.uniform(-np.pi, np.pi, size=n)
    r = best_fisher_r(kappa)
    out = np.empty(n)
    filled = 0
    fill = vonmises_fill_nb if _accel.USE_NUMBA else vonmises_fill_np
    block = block or max(64, int(1.5 * n) + 16)
    while filled < n:
        u = rng.random((block, 3))
        filled = fill(u, out, filled, kappa, r, mu)
    # angles at exactly pi wrap to -pi by construction
    return out


# ---------------------------------------------------------------------------
# Pairwise equi-correlated normal score, per observation row
# ---------------------------------------------------------------------------


@njit
def eqcorr_rowstats_nb(x):
    n, q = x.shape
    means = np.empty(n)
    ssw = np.empty(n)
    for i in range(n):
        m = 0.0
        for r in range(q):
            m += x[i, r]
        m /= q
        s = 0.0
        for r in range(q):
            dlt = x[i, r] - m
            s += dlt * dlt
        means[i] = m
        ssw[i] = s
    return means, ssw


def eqcorr_rowstats_np(x):
    means = x.mean(axis=1)
    ssw = ((x - means[:, None]) ** 2).sum(axis=1)
    return means, ssw


def eqcorr_rowstats(x):
    """Row means and within-row sums of squares of an n x q matrix."""
    x = np.ascontiguousarray(x, dtype=float)
    if _accel.USE_NUMBA:
        return eqcorr_rowstats_nb(x)
    return eqcorr_rowstats_np(x)


@njit
def eqcorr_pointwise_nb(means, ssw, q, mu, sigma2, rho):
    n = means.shape[0]
    out = np.empty(n)
    npairs = q * (q - 1.0)
    c0 = 0.5 * npairs * math.log(sigma2) + 0.25 * npairs * math.log(1.0 - rho * rho)
    cw = (q - 1.0 + rho) / (2.0 * sigma2 * (1.0 - rho * rho))
    cb = npairs / (2.0 * sigma2 * (1.0 + rho))
    for i in range(n):
        d = means[i] - mu
        out[i] = c0 + cw * ssw[i] + cb * d * d
    return out


def eqcorr_pointwise_np(means, ssw, q, mu, sigma2, rho):
    npairs = q * (q - 1.0)
    c0 = 0.5 * npairs * np.log(sigma2) + 0.25 * npairs * np.log(1.0 - rho * rho)
    cw = (q - 1.0 + rho) / (2.0 * sigma2 * (1.0 - rho * rho))
    cb = npairs / (2.0 * sigma2 * (1.0 + rho))
    return c0 + cw * ssw + cb * (means - mu) ** 2


def eqcorr_pointwise(means, ssw, q, mu, sigma2, rho):
    """Negative pairwise log-likelihood of each row (constant dropped)."""
    if _accel.USE_NUMBA:
        return eqcorr_pointwise_nb(means, ssw, float(q), float(mu), float(sigma2), float(rho))
    return eqcorr_pointwise_np(means, ssw, float(q), float(mu), float(sigma2), float(rho))


# ---------------------------------------------------------------------------
# Tsallis score for Gaussian linear regression, per observation
# ---------------------------------------------------------------------------


@njit
def tsallis_linreg_nb(y, X, beta, sigma2, gamma):
    n, p = X.shape
    out = np.empty(n)
    scale = (2.0 * math.pi * sigma2) ** (-(gamma - 1.0) / 2.0)
    const = (gamma - 1.0) * scale / math.sqrt(gamma)
    a = (gamma - 1.0) / (2.0 * sigma2)
    for i in range(n):
        mu = 0.0
        for j in range(p):
            mu += X[i, j] * beta[j]
        r = y[i] - mu
        out[i] = const - gamma * scale * math.exp(-a * r * r)
    return out


def tsallis_linreg_np(y, X, beta, sigma2, gamma):
    scale = (2.0 * np.pi * sigma2) ** (-(gamma - 1.0) / 2.0)
    const = (gamma - 1.0) * scale / np.sqrt(gamma)
    r = y - X @ beta
    return const - gamma * scale * np.exp(-(gamma - 1.0) / (2.0 * sigma2) * r * r)


def tsallis_linreg(y, X, beta, sigma2, gamma):
    """Tsallis score of each response under N(x_i beta, sigma2)."""
    y = np.ascontiguousarray(y, dtype=float)
    X = np.ascontiguousarray(X, dtype=float)
    beta = np.ascontiguousarray(beta, dtype=float)
    if _accel.USE_NUMBA:
        return tsallis_linreg_nb(y, X, beta, float(sigma2), float(gamma))
    return tsallis_linreg_np(y, X, beta, float(sigma2), float(gamma))
