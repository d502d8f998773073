"""Minimum-score estimation, closed-form estimators and Godambe information."""
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import DegenerateSample, MaxIterations, NonFiniteScore, NotPositiveDefinite
from .numerics import spd_factor
from .scoring import as_data, reparametrize, total_score

MAX_ITER = 100_000
XATOL = 1e-10


@dataclass
class MinScoreResult:
    theta: np.ndarray
    score_value: float
    iterations: int
    converged: bool
    gradient_norm: float


def _objective(model, data):
    def f(theta):
        if not model.in_domain(theta):
            return np.inf
        v = float(np.sum(model.pointwise(data, theta)))
        return v if np.isfinite(v) else np.inf

    return f


def _default_starts(theta_init, count=3):
    theta_init = np.asarray(theta_init, dtype=float)
    step = 0.1 * np.maximum(1.0, np.abs(theta_init))
    starts = [theta_init, theta_init + step, theta_init - step]
    return starts[:count]


def _gradient_ok(model, data, theta, value):
    ev = total_score(model, data, theta, derivatives=True)
    gnorm = float(np.linalg.norm(ev.gradient))
    return gnorm <= 1e-6 * max(1.0, abs(value)), gnorm, ev


def minimize_total_score(model, data, theta_init, starts=None, max_iter=MAX_ITER, cmap=None):
    """Minimize the total empirical score by Nelder-Mead with a gradient certificate.

    Each start runs the simplex to size ``1e-10``; the best end point is
    refined by Newton steps while they shrink the gradient, then checked
    against the gradient criterion, with up to two further Newton or simplex
    restarts when the check fails. ``starts`` defaults to ``theta_init`` and two perturbed
    copies. With a :class:`~scorebayes.transforms.CoordinateMap` the search
    runs in its unconstrained coordinates; starts and result stay in model
    coordinates.
    """
    if cmap is not None and not cmap.is_identity:
        inner = reparametrize(model, cmap)
        psi_starts = None if starts is None else [cmap.from_model(s) for s in starts]
        res = minimize_total_score(inner, data, cmap.from_model(theta_init), psi_starts, max_iter)
        theta = cmap.to_model(res.theta)
        ok, gnorm, _ = _gradient_ok(model, as_data(data), theta, res.score_value)
        return MinScoreResult(theta, res.score_value, res.iterations, ok or res.converged, gnorm)
    data = as_data(data)
    theta_init = np.atleast_1d(np.asarray(theta_init, dtype=float))
    f = _objective(model, data)
    if not np.isfinite(f(theta_init)):
        raise NonFiniteScore(f"score not finite at initial point {theta_init}", "minimize_total_score")
    if starts is None:
        starts = _default_starts(theta_init)
    starts = [np.atleast_1d(np.asarray(s, dtype=float)) for s in starts]

    def run(x0):
        res = optimize.minimize(
            f, x0, method="Nelder-Mead",
            options={"xatol": XATOL, "fatol": np.inf, "maxiter": max_iter,
                     "maxfev": 2 * max_iter, "adaptive": x0.size > 2},
        )
        if res.nit >= max_iter:
            raise MaxIterations(f"simplex did not shrink within {max_iter} iterations",
                                "minimize_total_score")
        return res

    results = [run(s) for s in starts if np.isfinite(f(s))]
    best = min(results, key=lambda r: r.fun)
    theta, value, nit = np.asarray(best.x, dtype=float), float(best.fun), int(sum(r.nit for r in results))
    if not np.isfinite(value):
        raise NonFiniteScore("score not finite at the simplex optimum", "minimize_total_score")

    ok, gnorm, ev = _gradient_ok(model, data, theta, value)
    # simplex ends are limited to ~sqrt(eps) by flat function values near the
    # minimum; Newton steps accepted on a smaller gradient sharpen them
    for _ in range(3):
        try:
            step = np.linalg.solve(ev.hessian, ev.gradient)
        except np.linalg.LinAlgError:
            break
        cand = theta - step
        if not np.isfinite(f(cand)):
            break
        c_ok, c_norm, c_ev = _gradient_ok(model, data, cand, f(cand))
        if not c_norm < gnorm or f(cand) > value + 1e-9 * max(1.0, abs(value)):
            break
        theta, value, ok, gnorm, ev = cand, f(cand), c_ok, c_norm, c_ev
    for _ in range(2):
        if ok:
            break
        try:
            step = np.linalg.solve(ev.hessian, ev.gradient)
        except np.linalg.LinAlgError:
            step = None
        if step is not None and np.isfinite(f(theta - step)) and f(theta - step) <= value:
            theta = theta - step
        else:
            res = run(theta)
            nit += int(res.nit)
            theta = np.asarray(res.x, dtype=float)
        value = f(theta)
        ok, gnorm, ev = _gradient_ok(model, data, theta, value)
    return MinScoreResult(theta, float(value), nit, ok, gnorm)


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def trig_moments(angles):
    t = np.asarray(angles, dtype=float).ravel()
    return (np.mean(np.cos(t)), np.mean(np.sin(t)), np.mean(np.cos(2 * t)), np.mean(np.sin(2 * t)))


def circular_ab_estimate(angles):
    """Circular score-matching estimate of ``(a, b)`` from the 2x2 normal equations."""
    C, S, C2, S2 = trig_moments(angles)
    A = np.array([[(1.0 - C2) / 2.0, -S2 / 2.0], [-S2 / 2.0, (1.0 + C2) / 2.0]])
    if 1.0 - (C2 * C2 + S2 * S2) < 1e-12:
        raise DegenerateSample("second trigonometric moment has unit length", "circular_ab_estimate")
    return np.linalg.solve(A, np.array([C, S]))


def vmf_kappa_closed_form(angles, theta0=0.0):
    """Closed-form score-matching concentration estimate on the circle.

    Equals the length of the ``(a, b)`` score-matching estimate, so it does
    not depend on ``theta0``. Raises :class:`DegenerateSample` when the
    mean resultant length of the doubled angles is one.
    """
    C, S, C2, S2 = trig_moments(angles)
    R2 = C * C + S * S
    R22 = C2 * C2 + S2 * S2
    if R22 >= 1.0 - 1e-12:
        raise DegenerateSample("mean resultant length of doubled angles is 1", "vmf_kappa_closed_form")
    num = R2 * (1.0 + R22) + 2.0 * (C * C - S * S) * C2 + 4.0 * C * S * S2
    return float(2.0 * np.sqrt(max(num, 0.0)) / (1.0 - R22))


def vonmises_kappa_estimate(angles, theta0=0.0):
    """Minimizer of the von Mises Hyvarinen score in ``kappa`` with known mean direction."""
    u = np.asarray(angles, dtype=float).ravel() - theta0
    den = np.sum(np.sin(u) ** 2)
    # sin of an on-axis angle is only zero up to rounding
    if den <= u.size * np.finfo(float).eps:
        raise DegenerateSample("all angles on the mean axis", "vonmises_kappa_estimate")
    return float(max(np.sum(np.cos(u)) / den, 0.0))


def nef_theta_closed_form(data, nef):
    """Hyvarinen estimator ``-mean(a'(x))``; needs no normalizing constant."""
    x = as_data(data)[:, 0]
    if x.size == 0:
        raise ValueError("empty dataset")
    return float(-np.mean(nef.a_prime(x)))


# ---------------------------------------------------------------------------
# Sensitivity, variability, Godambe
# ---------------------------------------------------------------------------


def estimate_K(model, data, theta):
    """Sensitivity matrix: average per-observation Hessian of the score."""
    return np.mean(model.pointwise_hess(data, theta), axis=0)


def estimate_J(model, data, theta):
    """Variability matrix: average outer product of per-observation score gradients."""
    s = model.pointwise_grad(data, theta)
    return s.T @ s / len(s)


@dataclass
class InformationCheck:
    K: np.ndarray
    J: np.ndarray
    K_se: np.ndarray
    J_se: np.ndarray
    diff_se: np.ndarray

    @property
    def z(self):
        """Elementwise ``(K - J) / se(K - J)``."""
        return (self.K - self.J) / self.diff_se


def information_check(model, data, theta):
    """K and J with elementwise Monte-Carlo standard errors of K, J and K - J."""
    H = model.pointwise_hess(data, theta)
    s = model.pointwise_grad(data, theta)
    outer = s[:, :, None] * s[:, None, :]
    n = len(s)
    se = lambda a: a.std(axis=0, ddof=1) / np.sqrt(n)
    return InformationCheck(H.mean(axis=0), outer.mean(axis=0), se(H), se(outer), se(H - outer))


@dataclass
class GodambeEstimate:
    K: np.ndarray
    J: np.ndarray
    G: np.ndarray
    V: np.ndarray
    C: np.ndarray
    H: np.ndarray
    theta: np.ndarray

    def summary(self):
        return {k: np.asarray(getattr(self, k)).tolist() for k in ("K", "J", "G", "V", "C", "H", "theta")}


def assemble_godambe(K, J, theta, score_hessian=None, n=1):
    """Godambe matrix, sandwich variance, calibration ``C`` and curvature ``H``.

    ``C = M^{-1} M_A`` with upper-triangular ``M^T M = K`` and ``M_A^T M_A = G``;
    ``H = C^T (d2 S) C / n`` when the total-score Hessian is given.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    J = np.atleast_2d(np.asarray(J, dtype=float))
    try:
        M = spd_factor(K)
        MJ = spd_factor(J)
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(f"{exc}", "assemble_godambe") from exc
    K = 0.5 * (K + K.T)
    J = 0.5 * (J + J.T)
    # G = K J^{-1} K through the factor of J
    W = np.linalg.solve(MJ.T, K)
    G = W.T @ W
    Kinv_J = np.linalg.solve(K, J)
    V = np.linalg.solve(K, Kinv_J.T)
    V = 0.5 * (V + V.T)
    MA = spd_factor(G)
    C = np.linalg.solve(M, MA)
    if score_hessian is None:
        H = C.T @ (n * K) @ C / n
    else:
        S2 = np.atleast_2d(np.asarray(score_hessian, dtype=float))
        H = C.T @ S2 @ C / n
    H = 0.5 * (H + H.T)
    return GodambeEstimate(K, J, G, V, C, H, np.atleast_1d(np.asarray(theta, dtype=float)))


def godambe_at(model, data, theta, use_identity=None):
    """Estimate K and J at ``theta`` and assemble the Godambe summary.

    For scores with the information identity, ``J`` is set to ``K`` so that
    calibration is the identity map.
    """
    data = as_data(data)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    K = estimate_K(model, data, theta)
    identity = model.information_identity if use_identity is None else use_identity
    J = K.copy() if identity else estimate_J(model, data, theta)
    S2 = total_score(model, data, theta).hessian
    return assemble_godambe(K, J, theta, S2, len(data))
