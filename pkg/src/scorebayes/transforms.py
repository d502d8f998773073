"""Elementwise bijections between model coordinates and the real line."""
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit, logit

from .errors import DomainError


@dataclass(frozen=True)
class Bijection:
    """Scalar map ``theta = to_model(psi)`` with ``log |d theta / d psi|``.

    ``dlog_abs_deriv`` is the derivative of ``log_abs_deriv`` in ``psi``; it
    gives the second derivative of the map for analytic chain rules.
    """

    name: str
    to_model: Callable
    from_model: Callable
    log_abs_deriv: Callable
    dlog_abs_deriv: Optional[Callable] = None


IDENTITY = Bijection("identity", lambda u: u, lambda t: t, lambda u: 0.0 * u, lambda u: 0.0 * u)
LOG = Bijection("log", np.exp, np.log, lambda u: u, lambda u: 1.0 + 0.0 * u)


def scaled_logit(lo, hi):
    """``theta = lo + (hi - lo) * expit(psi)``; plain logit when (lo, hi) = (0, 1)."""
    width = hi - lo

    def to_model(u):
        return lo + width * expit(u)

    def from_model(t):
        t = np.asarray(t, dtype=float)
        if np.any(t <= lo) or np.any(t >= hi):
            raise DomainError(f"value outside ({lo}, {hi})", "scaled_logit")
        return logit((t - lo) / width)

    def log_abs_deriv(u):
        # log(width * s * (1 - s)) with s = expit(u), overflow-safe
        return np.log(width) - np.logaddexp(0.0, u) - np.logaddexp(0.0, -u)

    def dlog_abs_deriv(u):
        return -np.tanh(0.5 * np.asarray(u, dtype=float))

    name = "logit" if (lo, hi) == (0.0, 1.0) else f"scaled_logit({lo:g},{hi:g})"
    return Bijection(name, to_model, from_model, log_abs_deriv, dlog_abs_deriv)


LOGIT = scaled_logit(0.0, 1.0)


class CoordinateMap:
    """Product of scalar bijections, one per parameter coordinate."""

    def __init__(self, parts: Sequence[Bijection]):
        self.parts = tuple(parts)

    @classmethod
    def identity(cls, d):
        return cls([IDENTITY] * d)

    @property
    def dim(self):
        return len(self.parts)

    @property
    def is_identity(self):
        return all(b is IDENTITY for b in self.parts)

    def to_model(self, psi):
        psi = np.atleast_1d(np.asarray(psi, dtype=float))
        return np.array([b.to_model(u) for b, u in zip(self.parts, psi)], dtype=float)

    def from_model(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return np.array([b.from_model(t) for b, t in zip(self.parts, theta)], dtype=float)

    def log_abs_jacobian(self, psi):
        psi = np.atleast_1d(np.asarray(psi, dtype=float))
        return float(sum(b.log_abs_deriv(u) for b, u in zip(self.parts, psi)))

    def jacobian_diag(self, psi):
        psi = np.atleast_1d(np.asarray(psi, dtype=float))
        return np.exp([b.log_abs_deriv(u) for b, u in zip(self.parts, psi)])

    @property
    def has_second_derivative(self):
        return all(b.dlog_abs_deriv is not None for b in self.parts)

    def second_diag(self, psi):
        """``d2 theta / d psi2`` per coordinate (all maps here are increasing)."""
        psi = np.atleast_1d(np.asarray(psi, dtype=float))
        return self.jacobian_diag(psi) * np.array([b.dlog_abs_deriv(u) for b, u in zip(self.parts, psi)], dtype=float)

    def __repr__(self):
        return f"CoordinateMap({[b.name for b in self.parts]})"


# variance parametrized by the log standard deviation: sigma2 = exp(2 tau)
LOG_SD = Bijection("log_sd", lambda u: np.exp(2.0 * u), lambda t: 0.5 * np.log(t),
                   lambda u: np.log(2.0) + 2.0 * u, lambda u: 2.0 + 0.0 * u)
