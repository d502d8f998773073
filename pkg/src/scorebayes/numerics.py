"""Small dense linear algebra, finite differences, Bessel ratio, 1-D grids."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DomainError, NonFiniteEvaluation, NotPositiveDefinite, ZeroMass

EPS = np.finfo(float).eps
MAX_DIM = 16


def as_square(M, name="matrix"):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if M.shape[0] > MAX_DIM:
        raise ValueError(f"{name} dimension {M.shape[0]} exceeds {MAX_DIM}")
    if not np.all(np.isfinite(M)):
        raise NonFiniteEvaluation(f"{name} has non-finite entries", "as_square")
    return M


def spd_factor(M):
    """Upper-triangular ``R`` with positive diagonal and ``R.T @ R == M``.

    Raises :class:`NotPositiveDefinite` when ``M`` is asymmetric beyond 1e-8
    (relative) or a leading minor is not positive.
    """
    M = as_square(M)
    scale = max(np.abs(M).max(), np.finfo(float).tiny)
    if np.abs(M - M.T).max() > 1e-8 * scale:
        raise NotPositiveDefinite("matrix is not symmetric", "spd_factor")
    M = 0.5 * (M + M.T)
    d = M.shape[0]
    R = np.zeros_like(M)
    for j in range(d):
        s = M[j, j] - R[:j, j] @ R[:j, j]
        if not s > 0.0:
            raise NotPositiveDefinite(f"leading minor {j + 1} is not positive", "spd_factor")
        R[j, j] = np.sqrt(s)
        if j + 1 < d:
            R[j, j + 1:] = (M[j, j + 1:] - R[:j, j] @ R[:j, j + 1:]) / R[j, j]
    return R


def _check(value, where):
    if not np.all(np.isfinite(value)):
        raise NonFiniteEvaluation(f"non-finite value at stencil point {where}", "finite_difference")
    return value


def fd_gradient(f, theta):
    """Central-difference gradient, step ``cbrt(eps) * max(1, |theta_j|)``.

    ``f`` may return a scalar or an array (e.g. one value per observation);
    the derivative axis is appended last.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    h = np.cbrt(EPS) * np.maximum(1.0, np.abs(theta))
    cols = []
    for j in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[j] += h[j]
        tm[j] -= h[j]
        # actual step after rounding
        step = tp[j] - tm[j]
        fp = _check(np.asarray(f(tp), dtype=float), tp)
        fm = _check(np.asarray(f(tm), dtype=float), tm)
        cols.append((fp - fm) / step)
    return np.stack(cols, axis=-1)


def fd_hessian(f, theta):
    """Central-difference Hessian, step ``eps**(1/4) * max(1, |theta_j|)``.

    Symmetrized before return. Vector-valued ``f`` gives a trailing
    ``(d, d)`` block per output element.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = theta.size
    h = EPS ** 0.25 * np.maximum(1.0, np.abs(theta))
    f0 = _check(np.asarray(f(theta), dtype=float), theta)
    H = np.empty(f0.shape + (d, d))

    def ev(steps):
        t = theta.copy()
        for j, s in steps:
            t[j] += s * h[j]
        return _check(np.asarray(f(t), dtype=float), t)

    for i in range(d):
        H[..., i, i] = (ev([(i, 1)]) - 2.0 * f0 + ev([(i, -1)])) / h[i] ** 2
        for j in range(i + 1, d):
            v = (ev([(i, 1), (j, 1)]) - ev([(i, 1), (j, -1)])
                 - ev([(i, -1), (j, 1)]) + ev([(i, -1), (j, -1)])) / (4.0 * h[i] * h[j])
            H[..., i, j] = v
            H[..., j, i] = v
    return 0.5 * (H + np.swapaxes(H, -1, -2))


def fd_third(f, theta):
    """Third-derivative tensor by central differences of :func:`fd_hessian`."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = theta.size
    h = EPS ** 0.2 * np.maximum(1.0, np.abs(theta)) * 4.0
    T = np.empty((d, d, d))
    for k in range(d):
        tp = theta.copy()
        tm = theta.copy()
        tp[k] += h[k]
        tm[k] -= h[k]
        T[:, :, k] = (fd_hessian(f, tp) - fd_hessian(f, tm)) / (tp[k] - tm[k])
    # symmetrize over all index permutations
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    return sum(np.transpose(T, p) for p in perms) / 6.0


def fd_derivatives_1d(f, x, h=None):
    """First four derivatives of a scalar function of one variable.

    Uses the 7-point central stencil; returns ``(f', f'', f''', f'''')``.
    """
    x = float(x)
    if h is None:
        h = 1e-2 * max(1.0, abs(x))
    k = np.arange(-3, 4)
    v = np.array([float(f(x + kk * h)) for kk in k])
    _check(v, x)
    d1 = (-v[0] + 9 * v[1] - 45 * v[2] + 45 * v[4] - 9 * v[5] + v[6]) / (60 * h)
    d2 = (2 * v[0] - 27 * v[1] + 270 * v[2] - 490 * v[3] + 270 * v[4] - 27 * v[5] + 2 * v[6]) / (180 * h ** 2)
    d3 = (v[0] - 8 * v[1] + 13 * v[2] - 13 * v[4] + 8 * v[5] - v[6]) / (8 * h ** 3)
    d4 = (-v[0] + 12 * v[1] - 39 * v[2] + 56 * v[3] - 39 * v[4] + 12 * v[5] - v[6]) / (6 * h ** 4)
    return d1, d2, d3, d4


def bessel_ratio_A1(kappa):
    """Mean resultant length ``I1(kappa) / I0(kappa)`` of a von Mises law.

    Power series below ``kappa = 20``, Lentz continued fraction above; the
    individual Bessel functions are never formed. Accepts scalars or arrays.
    """
    k = np.asarray(kappa, dtype=float)
    if np.any(k < 0) or np.any(np.isnan(k)):
        raise DomainError("bessel_ratio_A1 requires kappa >= 0", "bessel_ratio_A1")
    if np.any(k > 1e6):
        raise DomainError("bessel_ratio_A1 supports kappa <= 1e6", "bessel_ratio_A1")
    out = kernels.a1_array(k.ravel()).reshape(k.shape)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Grid1D:
    """Nonnegative values on strictly increasing nodes."""

    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if nodes.ndim != 1 or nodes.size < 3:
            raise ValueError("Grid1D needs at least 3 nodes")
        if values.shape != nodes.shape:
            raise ValueError("nodes and values must align")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("Grid1D nodes must be strictly increasing")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("Grid1D values must be finite and nonnegative")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    def mass(self):
        return float(np.trapezoid(self.values, self.nodes))


def grid_normalize(grid):
    mass = grid.mass()
    if not (mass > 0.0 and np.isfinite(mass)):
        raise ZeroMass("grid has zero or non-finite trapezoid mass", "grid_normalize")
    # already normalized up to rounding: leave untouched so the map is idempotent
    if abs(mass - 1.0) <= 8 * EPS:
        return grid
    return Grid1D(grid.nodes, grid.values / mass)
