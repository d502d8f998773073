"""Parametric models, log-densities and seeded samplers."""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from . import kernels
from .errors import DomainError, UnknownNormalizer
from .numerics import spd_factor
from .scoring import LOG_2PI, log_i0


def make_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class VonMisesModel:
    """Von Mises law on the circle, density proportional to ``exp(kappa cos(t - theta0))``."""

    theta0: float = 0.0
    kappa: float = 1.0

    def __post_init__(self):
        if not self.kappa >= 0.0:
            raise DomainError("kappa must be nonnegative", "VonMisesModel")

    def log_density(self, t):
        t = np.asarray(t, dtype=float)
        return self.kappa * np.cos(t - self.theta0) - LOG_2PI - log_i0(self.kappa)

    def grad_log_density(self, t):
        return -self.kappa * np.sin(np.asarray(t, dtype=float) - self.theta0)

    def laplacian_log_density(self, t):
        return -self.kappa * np.cos(np.asarray(t, dtype=float) - self.theta0)

    def natural_params(self):
        return self.kappa * np.cos(self.theta0), self.kappa * np.sin(self.theta0)


@dataclass(frozen=True)
class EqCorrModel:
    """q-variate normal with common mean, variance and correlation."""

    q: int
    mu: float = 0.0
    sigma2: float = 1.0
    rho: float = 0.0

    def __post_init__(self):
        if self.q < 2:
            raise DomainError("q must be at least 2", "EqCorrModel")
        if not self.sigma2 > 0.0:
            raise DomainError("sigma2 must be positive", "EqCorrModel")
        if not (-1.0 / (self.q - 1) < self.rho < 1.0):
            raise DomainError(f"rho={self.rho} outside (-1/(q-1), 1)", "EqCorrModel")

    def covariance(self):
        q = self.q
        return self.sigma2 * ((1.0 - self.rho) * np.eye(q) + self.rho * np.ones((q, q)))

    def log_density(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        R = spd_factor(self.covariance())
        z = np.linalg.solve(R.T, (x - self.mu).T)
        logdet = 2.0 * np.sum(np.log(np.diag(R)))
        return -0.5 * (self.q * LOG_2PI + logdet + np.sum(z * z, axis=0))


@dataclass(frozen=True)
class LinRegModel:
    X: np.ndarray
    beta: np.ndarray
    sigma2: float = 1.0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        n, p = X.shape
        if n <= p:
            raise DomainError("regression needs n > p", "LinRegModel")
        if np.linalg.matrix_rank(X) < p:
            raise DomainError("design matrix is not of full column rank", "LinRegModel")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))

    def log_density(self, y):
        r = np.asarray(y, dtype=float) - self.X @ self.beta
        return -0.5 * (LOG_2PI + np.log(self.sigma2)) - 0.5 * r * r / self.sigma2


@dataclass(frozen=True)
class NefModel:
    """One-parameter natural exponential family ``exp(theta x - k(theta) + a(x))``."""

    a: Callable
    a_prime: Callable
    a_second: Callable
    k: Optional[Callable] = None

    def log_density(self, x, theta):
        if self.k is None:
            raise UnknownNormalizer("cumulant function k(theta) not supplied", "NefModel.log_density")
        x = np.asarray(x, dtype=float)
        return theta * x - self.k(theta) + self.a(x)

    def grad_log_density(self, x, theta):
        return theta + self.a_prime(np.asarray(x, dtype=float))

    def laplacian_log_density(self, x, theta):
        return self.a_second(np.asarray(x, dtype=float))

    def check_derivatives(self, rng=0, npoints=100, tol=1e-5):
        """Max discrepancy between ``a''`` and a central difference of ``a'``."""
        x = make_rng(rng).normal(size=npoints)
        h = 1e-5 * np.maximum(1.0, np.abs(x))
        fd = (self.a_prime(x + h) - self.a_prime(x - h)) / (2.0 * h)
        err = float(np.max(np.abs(fd - self.a_second(x))))
        return err <= tol, err


@dataclass(frozen=True)
class LocationScaleModel:
    """Location or scale family generated by a standardized base density."""

    base_logpdf: Callable
    mode: str = "location"
    value: float = 0.0
    support: tuple = (-np.inf, np.inf)
    base_sampler: Optional[Callable] = None

    def __post_init__(self):
        if self.mode not in ("location", "scale"):
            raise ValueError("mode must be 'location' or 'scale'")
        if self.mode == "scale" and not self.value > 0.0:
            raise DomainError("scale parameter must be positive", "LocationScaleModel")

    def base_mass(self):
        val, _ = integrate.quad(lambda z: np.exp(self.base_logpdf(z)), *self.support, limit=200)
        return val

    def base_power_integral(self, gamma):
        val, _ = integrate.quad(lambda z: np.exp(gamma * self.base_logpdf(z)), *self.support, limit=200)
        return val

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        if self.mode == "location":
            return self.base_logpdf(x - self.value)
        return self.base_logpdf(x / self.value) - np.log(self.value)

    def sample(self, seed, n):
        if self.base_sampler is None:
            raise ValueError("no base sampler supplied")
        z = self.base_sampler(make_rng(seed), n)
        return z + self.value if self.mode == "location" else z * self.value


def standard_normal_logpdf(z):
    return -0.5 * LOG_2PI - 0.5 * np.asarray(z, dtype=float) ** 2


def normal_location_scale(mode="location", value=0.0):
    return LocationScaleModel(standard_normal_logpdf, mode, value,
                              base_sampler=lambda rng, n: rng.standard_normal(n))


def log_density(model, observation, *args):
    """Exact log-density of ``observation`` under ``model`` (normalizer included)."""
    return model.log_density(observation, *args)


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------


def sample_vonmises(seed, n, theta0, kappa):
    """``n`` von Mises angles in [-pi, pi) by Best-Fisher rejection."""
    if not kappa >= 0.0:
        raise DomainError("kappa must be nonnegative", "sample_vonmises")
    return kernels.sample_vonmises_angles(make_rng(seed), int(n), float(theta0), float(kappa))


def sample_eqcorr(seed, n, q, mu, sigma2, rho):
    """``n x q`` equi-correlated normal sample via the full covariance factor."""
    model = EqCorrModel(q, mu, sigma2, rho)
    R = spd_factor(model.covariance())
    z = make_rng(seed).standard_normal((int(n), q))
    return mu + z @ R


@dataclass(frozen=True)
class ContaminatedSample:
    y: np.ndarray
    outliers: np.ndarray


def sample_linreg_contaminated(seed, X, beta, sigma2, eps=0.0, delta=0.0):
    """Gaussian regression responses with ``round(eps * n)`` mean-shift outliers.

    Contaminated responses are shifted by ``delta * sigma``; their indices are
    returned sorted.
    """
    if not 0.0 <= eps < 0.5:
        raise DomainError("contamination fraction must lie in [0, 0.5)", "sample_linreg_contaminated")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    rng = make_rng(seed)
    sigma = np.sqrt(sigma2)
    y = X @ np.asarray(beta, dtype=float) + sigma * rng.standard_normal(n)
    m = int(round(eps * n))
    idx = np.sort(rng.choice(n, size=m, replace=False)) if m else np.empty(0, dtype=int)
    y[idx] += delta * sigma
    return ContaminatedSample(y, idx)


def synthetic_design(seed, n, p):
    """Intercept plus ``p - 1`` standardized Gaussian covariates."""
    rng = make_rng(seed)
    Z = rng.standard_normal((n, p - 1))
    Z = (Z - Z.mean(axis=0)) / Z.std(axis=0)
    return np.column_stack([np.ones(n), Z])
