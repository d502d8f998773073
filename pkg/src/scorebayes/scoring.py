"""Proper scoring rules and the score-model abstraction.

Every score here is oriented so that smaller is better; the SR-posterior is
always ``prior * exp(-S)``.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from . import kernels
from .errors import (
    DomainError,
    IntegralUnavailable,
    NonFiniteDensity,
    NonFiniteDerivative,
)
from .numerics import bessel_ratio_A1, fd_gradient, fd_hessian
from .transforms import CoordinateMap

LOG_2PI = np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Score primitives
# ---------------------------------------------------------------------------


def log_score(x, logpdf):
    """``-log q(x)`` for a log-density callable."""
    val = np.asarray(logpdf(x), dtype=float)
    if not np.all(np.isfinite(val)):
        raise NonFiniteDensity("log-density is not finite at the observation", "log_score")
    return -val


@dataclass(frozen=True)
class TsallisConfig:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise DomainError(f"Tsallis gamma must exceed 1, got {self.gamma}", "TsallisConfig")


def gaussian_power_integral(sigma2, gamma):
    """``int N(y; m, sigma2)**gamma dy`` (independent of the mean)."""
    return (2.0 * np.pi * sigma2) ** ((1.0 - gamma) / 2.0) / np.sqrt(gamma)


def power_integral_quadrature(pdf, gamma, support=(-np.inf, np.inf)):
    """``int pdf(y)**gamma dy`` by adaptive quadrature (1-D densities only)."""
    val, _ = integrate.quad(lambda y: pdf(y) ** gamma, *support, limit=200)
    if not np.isfinite(val):
        raise IntegralUnavailable("quadrature of q**gamma did not converge", "tsallis_score")
    return val


def tsallis_score(x, pdf, cfg, integral=None, support=None):
    """Tsallis score ``(gamma - 1) int q**gamma - gamma q(x)**(gamma - 1)``.

    ``integral`` is the analytic value of ``int q**gamma`` when known; for a
    1-D density ``support`` enables the quadrature fallback.
    """
    gamma = cfg.gamma if isinstance(cfg, TsallisConfig) else TsallisConfig(float(cfg)).gamma
    if integral is None:
        if support is None:
            raise IntegralUnavailable("need an analytic int q**gamma or a 1-D support", "tsallis_score")
        integral = power_integral_quadrature(pdf, gamma, support)
    q = np.asarray(pdf(x), dtype=float)
    if not np.all(np.isfinite(q)):
        raise NonFiniteDensity("density is not finite at the observation", "tsallis_score")
    return (gamma - 1.0) * integral - gamma * q ** (gamma - 1.0)


def hyvarinen_score(x, grad_log_q, lap_log_q):
    """``laplacian log q(x) + 0.5 |grad log q(x)|**2``.

    Only derivatives of ``log q`` enter, so the normalizing constant is
    irrelevant.
    """
    g = np.atleast_1d(np.asarray(grad_log_q(x), dtype=float))
    lap = np.asarray(lap_log_q(x), dtype=float)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(lap))):
        raise NonFiniteDerivative("log-density derivatives are not finite", "hyvarinen_score")
    return lap + 0.5 * np.sum(g * g, axis=-1)


def circular_hyvarinen_score(t, a, b):
    """Hyvarinen score on the circle for density ``exp(a cos t + b sin t)``."""
    t = np.asarray(t, dtype=float)
    c, s = np.cos(t), np.sin(t)
    d1 = -a * s + b * c
    return (-a * c - b * s) + 0.5 * d1 * d1


def eqcorr_check_domain(q, sigma2, rho):
    if q < 2:
        raise DomainError("pairwise likelihood needs q >= 2", "pairwise_eqcorr_score")
    if not sigma2 > 0.0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}", "pairwise_eqcorr_score")
    if not (-1.0 / (q - 1.0) < rho < 1.0):
        raise DomainError(f"rho={rho} outside (-1/(q-1), 1)", "pairwise_eqcorr_score")


def pairwise_eqcorr_score(data, theta):
    """Negative pairwise log-likelihood of an n x q sample.

    Built from the within sum of squares ``SSW``, between sum of squares
    ``SSB`` and the grand mean; additive constants are dropped.
    """
    x = np.atleast_2d(np.asarray(data, dtype=float))
    n, q = x.shape
    mu, sigma2, rho = (float(v) for v in theta)
    eqcorr_check_domain(q, sigma2, rho)
    xbar_i = x.mean(axis=1)
    xbar = xbar_i.mean()
    ssw = np.sum((x - xbar_i[:, None]) ** 2)
    ssb = np.sum((xbar_i - xbar) ** 2)
    npairs = q * (q - 1.0)
    sp = (-0.5 * n * npairs * np.log(sigma2)
          - 0.25 * n * npairs * np.log(1.0 - rho ** 2)
          - (q - 1.0 + rho) / (2.0 * sigma2 * (1.0 - rho ** 2)) * ssw
          - (npairs * ssb + n * npairs * (xbar - mu) ** 2) / (2.0 * sigma2 * (1.0 + rho)))
    return -sp


# ---------------------------------------------------------------------------
# Score models
# ---------------------------------------------------------------------------


def _always(theta):
    return True


@dataclass
class ScoreModel:
    """A parametric model paired with a scoring rule.

    ``pointwise(data, theta)`` returns one score per row of ``data``.
    Optional ``grad`` / ``hess`` give per-row derivatives in ``theta`` with
    shapes ``(n, d)`` and ``(n, d, d)``; finite differences are used
    otherwise. ``information_identity`` marks scores whose sensitivity and
    variability matrices coincide in the model (the log score of a correctly
    specified likelihood); calibration then uses ``G = K``.
    """

    name: str
    param_dim: int
    pointwise: Callable
    grad: Optional[Callable] = None
    hess: Optional[Callable] = None
    in_domain: Callable = _always
    param_names: tuple = ()
    information_identity: bool = False
    meta: dict = field(default_factory=dict)

    def check(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.size != self.param_dim:
            raise ValueError(f"{self.name}: expected {self.param_dim} parameters, got {theta.size}")
        if not self.in_domain(theta):
            raise DomainError(f"{self.name}: parameter {theta} outside domain", self.name)
        return theta

    def scores(self, data, theta):
        theta = self.check(theta)
        return np.asarray(self.pointwise(as_data(data), theta), dtype=float)

    def pointwise_grad(self, data, theta):
        data = as_data(data)
        theta = self.check(theta)
        if self.grad is not None:
            return np.asarray(self.grad(data, theta), dtype=float).reshape(len(data), self.param_dim)
        return fd_gradient(lambda t: self.pointwise(data, t), theta).reshape(len(data), self.param_dim)

    def pointwise_hess(self, data, theta):
        data = as_data(data)
        theta = self.check(theta)
        d = self.param_dim
        if self.hess is not None:
            return np.asarray(self.hess(data, theta), dtype=float).reshape(len(data), d, d)
        return fd_hessian(lambda t: self.pointwise(data, t), theta).reshape(len(data), d, d)


def as_data(data):
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    return data


@dataclass
class TotalScoreEval:
    value: float
    gradient: Optional[np.ndarray] = None
    hessian: Optional[np.ndarray] = None


def total_score(model, data, theta, derivatives=True):
    """Sum of pointwise scores, with gradient and Hessian when requested."""
    data = as_data(data)
    theta = model.check(theta)
    d = model.param_dim
    if len(data) == 0:
        return TotalScoreEval(0.0, np.zeros(d), np.zeros((d, d)) if derivatives else None)
    value = float(np.sum(model.pointwise(data, theta)))
    if not derivatives:
        return TotalScoreEval(value)

    def total(t):
        return np.sum(model.pointwise(data, t))

    grad = (np.sum(model.pointwise_grad(data, theta), axis=0) if model.grad is not None
            else fd_gradient(total, theta))
    hess = (np.sum(model.pointwise_hess(data, theta), axis=0) if model.hess is not None
            else fd_hessian(total, theta))
    return TotalScoreEval(value, np.asarray(grad, float).reshape(d), np.asarray(hess, float).reshape(d, d))


def reparametrize(model, cmap: CoordinateMap, names=None):
    """Same score expressed in coordinates ``psi`` with ``theta = cmap.to_model(psi)``."""
    if cmap.is_identity:
        return model

    def pointwise(data, psi):
        return model.pointwise(data, cmap.to_model(psi))

    def in_domain(psi):
        theta = cmap.to_model(psi)
        return bool(np.all(np.isfinite(theta))) and model.in_domain(theta)

    grad = hess = None
    if model.grad is not None and model.hess is not None and cmap.has_second_derivative:
        # chain rule: the maps act coordinatewise, so the Jacobian is diagonal
        def grad(data, psi):
            return model.pointwise_grad(data, cmap.to_model(psi)) * cmap.jacobian_diag(psi)

        def hess(data, psi):
            theta = cmap.to_model(psi)
            jac = cmap.jacobian_diag(psi)
            g = model.pointwise_grad(data, theta)
            H = model.pointwise_hess(data, theta) * jac[:, None] * jac[None, :]
            idx = np.arange(model.param_dim)
            H[:, idx, idx] += g * cmap.second_diag(psi)
            return H

    return ScoreModel(
        name=f"{model.name}[{cmap}]",
        param_dim=model.param_dim,
        pointwise=pointwise,
        grad=grad,
        hess=hess,
        in_domain=in_domain,
        param_names=tuple(names or model.param_names),
        information_identity=model.information_identity,
        meta=dict(model.meta, coordinate_map=cmap, base_model=model),
    )


# --- normal family -----------------------------------------------------------


def _normal_unpack(theta, known_sigma):
    if known_sigma is None:
        return theta[0], np.exp(theta[1])
    return theta[0], known_sigma


def normal_log_score(known_sigma=None):
    """Log score of ``N(mu, sigma**2)`` in ``(mu, log sigma)`` or ``(mu,)``."""

    def pointwise(data, theta):
        mu, sigma = _normal_unpack(theta, known_sigma)
        z = (data[:, 0] - mu) / sigma
        return 0.5 * LOG_2PI + np.log(sigma) + 0.5 * z * z

    def grad(data, theta):
        mu, sigma = _normal_unpack(theta, known_sigma)
        z = (data[:, 0] - mu) / sigma
        if known_sigma is None:
            return np.column_stack([-z / sigma, 1.0 - z * z])
        return (-z / sigma)[:, None]

    def hess(data, theta):
        mu, sigma = _normal_unpack(theta, known_sigma)
        z = (data[:, 0] - mu) / sigma
        n = len(z)
        if known_sigma is None:
            H = np.empty((n, 2, 2))
            H[:, 0, 0] = 1.0 / sigma ** 2
            H[:, 0, 1] = H[:, 1, 0] = 2.0 * z / sigma
            H[:, 1, 1] = 2.0 * z * z
            return H
        return np.full((n, 1, 1), 1.0 / sigma ** 2)

    d = 1 if known_sigma is not None else 2
    names = ("mu",) if d == 1 else ("mu", "log_sigma")
    return ScoreModel("normal-log", d, pointwise, grad, hess, param_names=names,
                      information_identity=True)


def normal_tsallis_score(gamma, known_sigma=None):
    """Tsallis score of ``N(mu, sigma**2)`` in ``(mu, log sigma)`` or ``(mu,)``."""
    gamma = TsallisConfig(gamma).gamma

    def pointwise(data, theta):
        mu, sigma = _normal_unpack(theta, known_sigma)
        s2 = sigma * sigma
        logq = -0.5 * LOG_2PI - np.log(sigma) - 0.5 * ((data[:, 0] - mu) / sigma) ** 2
        return (gamma - 1.0) * gaussian_power_integral(s2, gamma) - gamma * np.exp((gamma - 1.0) * logq)

    d = 1 if known_sigma is not None else 2
    names = ("mu",) if d == 1 else ("mu", "log_sigma")
    return ScoreModel(f"normal-tsallis({gamma:g})", d, pointwise, param_names=names,
                      meta={"gamma": gamma})


def normal_hyvarinen_score(known_sigma=None):
    """Hyvarinen score of ``N(mu, sigma**2)`` in ``(mu, log sigma)`` or ``(mu,)``."""

    def pointwise(data, theta):
        mu, sigma = _normal_unpack(theta, known_sigma)
        s2 = sigma * sigma
        return -1.0 / s2 + 0.5 * (data[:, 0] - mu) ** 2 / (s2 * s2)

    d = 1 if known_sigma is not None else 2
    names = ("mu",) if d == 1 else ("mu", "log_sigma")
    return ScoreModel("normal-hyvarinen", d, pointwise, param_names=names)


# --- location / scale families with the Tsallis score -------------------------


def location_scale_tsallis_score(base, gamma):
    """Tsallis score for a :class:`~scorebayes.models.LocationScaleModel` family.

    The parameter is the location ``mu`` or the scale ``sigma`` (model
    coordinates, ``sigma > 0``). ``int q**gamma`` comes from one quadrature
    of the base density.
    """
    gamma = TsallisConfig(gamma).gamma
    base_int = base.base_power_integral(gamma)

    if base.mode == "location":
        def pointwise(data, theta):
            q = np.exp(base.base_logpdf(data[:, 0] - theta[0]))
            return (gamma - 1.0) * base_int - gamma * q ** (gamma - 1.0)

        return ScoreModel(f"location-tsallis({gamma:g})", 1, pointwise, param_names=("mu",),
                          meta={"gamma": gamma})

    def pointwise(data, theta):
        s = theta[0]
        q = np.exp(base.base_logpdf(data[:, 0] / s)) / s
        return (gamma - 1.0) * s ** (1.0 - gamma) * base_int - gamma * q ** (gamma - 1.0)

    return ScoreModel(f"scale-tsallis({gamma:g})", 1, pointwise, param_names=("sigma",),
                      in_domain=lambda t: t[0] > 0.0, meta={"gamma": gamma})


def location_scale_log_score(base):
    if base.mode == "location":
        def pointwise(data, theta):
            return -base.base_logpdf(data[:, 0] - theta[0])

        return ScoreModel("location-log", 1, pointwise, param_names=("mu",), information_identity=True)

    def pointwise(data, theta):
        s = theta[0]
        return np.log(s) - base.base_logpdf(data[:, 0] / s)

    return ScoreModel("scale-log", 1, pointwise, param_names=("sigma",),
                      in_domain=lambda t: t[0] > 0.0, information_identity=True)


# --- natural exponential family with the Hyvarinen score ----------------------


def nef_hyvarinen_score(nef):
    """Hyvarinen score ``a''(x) + 0.5 (theta + a'(x))**2`` of a one-parameter NEF."""

    def pointwise(data, theta):
        x = data[:, 0]
        return nef.a_second(x) + 0.5 * (theta[0] + nef.a_prime(x)) ** 2

    def grad(data, theta):
        return (theta[0] + nef.a_prime(data[:, 0]))[:, None]

    def hess(data, theta):
        return np.ones((len(data), 1, 1))

    return ScoreModel("nef-hyvarinen", 1, pointwise, grad, hess, param_names=("theta",))


# --- circular data --------------------------------------------------------------


def circular_ab_hyvarinen_score():
    """Hyvarinen score on the circle in natural parameters ``(a, b)``."""

    def pointwise(data, theta):
        return circular_hyvarinen_score(data[:, 0], theta[0], theta[1])

    def grad(data, theta):
        t = data[:, 0]
        c, s = np.cos(t), np.sin(t)
        d1 = -theta[0] * s + theta[1] * c
        return np.column_stack([-c - d1 * s, -s + d1 * c])

    def hess(data, theta):
        t = data[:, 0]
        c, s = np.cos(t), np.sin(t)
        H = np.empty((len(t), 2, 2))
        H[:, 0, 0] = s * s
        H[:, 0, 1] = H[:, 1, 0] = -s * c
        H[:, 1, 1] = c * c
        return H

    return ScoreModel("circular-hyvarinen-ab", 2, pointwise, grad, hess, param_names=("a", "b"))


def vonmises_kappa_hyvarinen_score(theta0=0.0):
    """Hyvarinen score of a von Mises law with known mean direction, in ``kappa``."""

    def pointwise(data, theta):
        u = data[:, 0] - theta0
        k = theta[0]
        s = np.sin(u)
        return -k * np.cos(u) + 0.5 * k * k * s * s

    def grad(data, theta):
        u = data[:, 0] - theta0
        return (-np.cos(u) + theta[0] * np.sin(u) ** 2)[:, None]

    def hess(data, theta):
        return (np.sin(data[:, 0] - theta0) ** 2)[:, None, None]

    return ScoreModel("vonmises-hyvarinen", 1, pointwise, grad, hess, param_names=("kappa",),
                      in_domain=lambda t: t[0] >= 0.0, meta={"theta0": theta0})


def log_i0(kappa):
    """Overflow-free ``log I0(kappa)``."""
    from scipy.special import i0e

    kappa = np.asarray(kappa, dtype=float)
    return kappa + np.log(i0e(kappa))


def vonmises_kappa_log_score(theta0=0.0):
    """Full von Mises log score in ``kappa`` (mean direction known)."""

    def pointwise(data, theta):
        k = theta[0]
        return -k * np.cos(data[:, 0] - theta0) + LOG_2PI + log_i0(k)

    def grad(data, theta):
        return (-np.cos(data[:, 0] - theta0) + bessel_ratio_A1(theta[0]))[:, None]

    def hess(data, theta):
        k = theta[0]
        a1 = bessel_ratio_A1(k)
        d2 = 0.5 if k == 0.0 else 1.0 - a1 / k - a1 * a1
        return np.full((len(data), 1, 1), d2)

    return ScoreModel("vonmises-log", 1, pointwise, grad, hess, param_names=("kappa",),
                      in_domain=lambda t: t[0] >= 0.0, information_identity=True,
                      meta={"theta0": theta0})


# --- equi-correlated normal, pairwise likelihood --------------------------------


EQCORR_PARAMS = ("mu", "sigma2", "rho")


def pairwise_eqcorr_model(q, free=EQCORR_PARAMS, known=None):
    """Pairwise log-likelihood score with the ``free`` subset of (mu, sigma2, rho).

    Parameters not in ``free`` are taken from ``known``. Row statistics are
    cached per data array.
    """
    known = dict(known or {})
    free = tuple(free)
    for name in EQCORR_PARAMS:
        if name not in free and name not in known:
            raise ValueError(f"parameter {name} must be free or known")
    cache = {}

    def full(theta):
        vals = dict(known)
        vals.update(zip(free, theta))
        return vals["mu"], vals["sigma2"], vals["rho"]

    def stats(data):
        key = id(data)
        hit = cache.get(key)
        if hit is None or hit[0] is not data:
            cache.clear()
            hit = (data, kernels.eqcorr_rowstats(data))
            cache[key] = hit
        return hit[1]

    def pointwise(data, theta):
        mu, sigma2, rho = full(theta)
        eqcorr_check_domain(data.shape[1], sigma2, rho)
        means, ssw = stats(data)
        return kernels.eqcorr_pointwise(means, ssw, data.shape[1], mu, sigma2, rho)

    def in_domain(theta):
        mu, sigma2, rho = full(theta)
        return sigma2 > 0.0 and -1.0 / (q - 1.0) < rho < 1.0

    idx = [EQCORR_PARAMS.index(f) for f in free]

    def grad(data, theta):
        return _eqcorr_derivatives(data, full(theta), stats(data))[0][:, idx]

    def hess(data, theta):
        return _eqcorr_derivatives(data, full(theta), stats(data))[1][:, idx][:, :, idx]

    return ScoreModel(f"pairwise-eqcorr(q={q})", len(free), pointwise, grad, hess, in_domain=in_domain,
                      param_names=free, meta={"q": q, "known": known, "free": free})


def _eqcorr_derivatives(data, theta, rowstats):
    """Per-row gradient and Hessian of the pairwise score in ``(mu, sigma2, rho)``."""
    mu, s, rho = theta
    q = data.shape[1]
    eqcorr_check_domain(q, s, rho)
    means, w = rowstats
    P = q * (q - 1.0)
    d = means - mu
    om = 1.0 - rho * rho
    A = (q - 1.0 + rho) / om
    N = 1.0 + 2.0 * (q - 1.0) * rho + rho * rho
    A1 = N / om ** 2
    A2 = ((2.0 * (q - 1.0) + 2.0 * rho) * om + 4.0 * rho * N) / om ** 3
    B = 1.0 / (1.0 + rho)
    B1 = -B * B
    B2 = 2.0 * B ** 3
    quad = A * w + P * B * d * d
    quad1 = A1 * w + P * B1 * d * d
    quad2 = A2 * w + P * B2 * d * d
    g = np.column_stack([
        -P * B * d / s,
        P / (2.0 * s) - quad / (2.0 * s * s),
        -0.5 * P * rho / om + quad1 / (2.0 * s),
    ])
    H = np.empty((len(d), 3, 3))
    H[:, 0, 0] = P * B / s
    H[:, 0, 1] = H[:, 1, 0] = P * B * d / s ** 2
    H[:, 0, 2] = H[:, 2, 0] = -P * B1 * d / s
    H[:, 1, 1] = -P / (2.0 * s * s) + quad / s ** 3
    H[:, 1, 2] = H[:, 2, 1] = -quad1 / (2.0 * s * s)
    H[:, 2, 2] = -0.5 * P * (1.0 + rho * rho) / om ** 2 + quad2 / (2.0 * s)
    return g, H


# --- linear regression -----------------------------------------------------------


def linreg_score(gamma, p):
    """Tsallis (``gamma > 1``) or log (``gamma == 1``) score of a Gaussian regression.

    Data rows are ``[y, x_1, ..., x_p]``; parameters are ``(beta_1..beta_p,
    log sigma)``.
    """
    gamma = float(gamma)
    if gamma == 1.0:
        def pointwise(data, theta):
            beta, tau = theta[:p], theta[p]
            r = data[:, 0] - data[:, 1:] @ beta
            return 0.5 * LOG_2PI + tau + 0.5 * r * r * np.exp(-2.0 * tau)

        def grad(data, theta):
            beta, tau = theta[:p], theta[p]
            X = data[:, 1:]
            r = data[:, 0] - X @ beta
            w = np.exp(-2.0 * tau)
            return np.column_stack([-(r * w)[:, None] * X, 1.0 - r * r * w])

        def hess(data, theta):
            beta, tau = theta[:p], theta[p]
            X = data[:, 1:]
            r = data[:, 0] - X @ beta
            w = np.exp(-2.0 * tau)
            n = len(r)
            H = np.empty((n, p + 1, p + 1))
            H[:, :p, :p] = w * X[:, :, None] * X[:, None, :]
            H[:, :p, p] = H[:, p, :p] = 2.0 * (r * w)[:, None] * X
            H[:, p, p] = 2.0 * r * r * w
            return H

        return ScoreModel("linreg-log", p + 1, pointwise, grad, hess,
                          param_names=tuple(f"beta{j}" for j in range(p)) + ("log_sigma",),
                          information_identity=True, meta={"gamma": 1.0, "p": p})

    TsallisConfig(gamma)

    def pointwise(data, theta):
        return kernels.tsallis_linreg(data[:, 0], data[:, 1:], theta[:p], np.exp(2.0 * theta[p]), gamma)

    return ScoreModel(f"linreg-tsallis({gamma:g})", p + 1, pointwise,
                      param_names=tuple(f"beta{j}" for j in range(p)) + ("log_sigma",),
                      meta={"gamma": gamma, "p": p})


def normal_scale_log_score():
    """Log score of ``N(0, sigma**2)`` in ``sigma > 0``."""

    def pointwise(data, theta):
        s = theta[0]
        return 0.5 * LOG_2PI + np.log(s) + 0.5 * (data[:, 0] / s) ** 2

    def grad(data, theta):
        s = theta[0]
        return (1.0 / s - data[:, 0] ** 2 / s ** 3)[:, None]

    def hess(data, theta):
        s = theta[0]
        return (-1.0 / s ** 2 + 3.0 * data[:, 0] ** 2 / s ** 4)[:, None, None]

    return ScoreModel("normal-scale-log", 1, pointwise, grad, hess, param_names=("sigma",),
                      in_domain=lambda t: t[0] > 0.0, information_identity=True)
