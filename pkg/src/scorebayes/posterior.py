"""Calibrated scoring-rule posteriors: targets, samplers, grids, approximations."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DomainError,
    NotPositiveDefinite,
    UnsupportedOrder,
    ZeroAcceptance,
    ZeroMass,
)
from .estimation import GodambeEstimate, godambe_at, minimize_total_score
from .numerics import (
    Grid1D,
    fd_derivatives_1d,
    fd_gradient,
    fd_hessian,
    fd_third,
    grid_normalize,
    spd_factor,
)
from .priors import PriorSpec
from .scoring import ScoreModel, as_data, total_score
from .transforms import CoordinateMap

LOG_2PI = np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Target
# ---------------------------------------------------------------------------


@dataclass
class CalibratedTarget:
    """Unnormalized SR-posterior ``prior(theta) exp{-S(theta_tilde + C (theta - theta_tilde))}``.

    The score is shifted by its value at ``theta_tilde`` so the log target is
    ``log prior(theta_tilde)`` there. ``cmap`` gives the unconstrained
    coordinates used for sampling.
    """

    prior: PriorSpec
    model: ScoreModel
    data: np.ndarray
    theta_tilde: np.ndarray
    C: np.ndarray
    cmap: CoordinateMap
    calibrate: bool = True
    godambe: Optional[GodambeEstimate] = None
    score_at_tilde: float = field(init=False)

    def __post_init__(self):
        self.data = as_data(self.data)
        self.theta_tilde = np.atleast_1d(np.asarray(self.theta_tilde, dtype=float))
        d = self.theta_tilde.size
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float)) if self.calibrate else np.eye(d)
        self.score_at_tilde = float(np.sum(self.model.pointwise(self.data, self.theta_tilde)))
        if not np.isfinite(self.log_target(self.theta_tilde)):
            raise DomainError("log target is not finite at theta_tilde", "CalibratedTarget")

    @property
    def dim(self):
        return self.theta_tilde.size

    @property
    def n(self):
        return len(self.data)

    def theta_star(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return self.theta_tilde + self.C @ (theta - self.theta_tilde)

    def shifted_score(self, theta):
        """``S(theta*) - S(theta_tilde)``; ``inf`` when ``theta*`` leaves the score domain."""
        ts = self.theta_star(theta)
        if not self.model.in_domain(ts):
            return np.inf
        return float(np.sum(self.model.pointwise(self.data, ts))) - self.score_at_tilde

    def log_target(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        s = self.shifted_score(theta)
        if not np.isfinite(s):
            return -np.inf
        return self.prior.log_density(theta) - s

    def log_target_unconstrained(self, psi):
        theta = self.cmap.to_model(psi)
        lt = self.log_target(theta)
        return lt + self.cmap.log_abs_jacobian(psi) if np.isfinite(lt) else -np.inf


def build_target(model, data, prior, theta_tilde=None, calibrate=True, cmap=None,
                 theta_init=None, godambe=None):
    """Estimate ``theta_tilde`` (if absent) and the Godambe summary, then freeze the target."""
    data = as_data(data)
    cmap = cmap or CoordinateMap.identity(model.param_dim)
    if theta_tilde is None:
        if theta_init is None:
            raise ValueError("need theta_tilde or theta_init")
        theta_tilde = minimize_total_score(model, data, theta_init, cmap=cmap).theta
    if godambe is None:
        godambe = godambe_at(model, data, theta_tilde)
    return CalibratedTarget(prior, model, data, theta_tilde, godambe.C, cmap, calibrate, godambe)


def log_sr_posterior(target, theta):
    return target.log_target(theta)


# ---------------------------------------------------------------------------
# Metropolis-Hastings
# ---------------------------------------------------------------------------


@dataclass
class Chain:
    draws: np.ndarray
    log_target: np.ndarray
    acceptance_rate: float
    burn_in: int
    thin: int
    seed: int
    proposal_scale: float = 1.0
    param_names: tuple = ()

    def __post_init__(self):
        if not 0.0 <= self.acceptance_rate <= 1.0:
            raise ValueError("acceptance rate must lie in [0, 1]")


def target_curvature(target):
    """``C^T (d2 S) C / n`` at ``theta_tilde`` (``C`` is the identity when uncalibrated)."""
    S2 = total_score(target.model, target.data, target.theta_tilde).hessian
    H = target.C.T @ S2 @ target.C / target.n
    return 0.5 * (H + H.T)


def default_proposal_cov(target):
    """``(2.38**2 / d) H^{-1} / n`` mapped to the sampling coordinates."""
    H = target_curvature(target)
    try:
        spd_factor(H)
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(f"curvature at theta_tilde: {exc}", "mh_sample") from exc
    cov_theta = (2.38 ** 2 / target.dim) * np.linalg.inv(H) / target.n
    D = target.cmap.jacobian_diag(target.cmap.from_model(target.theta_tilde))
    return cov_theta / np.outer(D, D)


def mh_sample(target, T=10_000, burn_in=2_000, seed=0, proposal_cov=None, thin=1, adapt=True):
    """Random-walk Metropolis in the unconstrained coordinates of ``target``.

    During burn-in the proposal scale adapts towards a fixed acceptance rate
    (0.44 in one dimension, 0.234 otherwise) with a diminishing step; it is
    frozen afterwards. Raises :class:`ZeroAcceptance` when fewer than 0.1% of
    post-burn-in proposals are accepted.
    """
    if T < 1000:
        raise ValueError("T must be at least 1000")
    if burn_in < 0 or thin < 1:
        raise ValueError("burn_in must be >= 0 and thin >= 1")
    d = target.dim
    cov = default_proposal_cov(target) if proposal_cov is None else np.atleast_2d(proposal_cov)
    R = spd_factor(cov)
    rng = np.random.default_rng(seed)
    goal = 0.44 if d == 1 else 0.234

    psi = target.cmap.from_model(target.theta_tilde)
    lp = target.log_target_unconstrained(psi)
    log_scale = 0.0
    draws = np.empty((T, d))
    logt = np.empty(T)
    accepted = 0
    kept = 0
    total = burn_in + T * thin
    for it in range(total):
        z = rng.standard_normal(d)
        u = rng.random()
        prop = psi + np.exp(log_scale) * (z @ R)
        lq = target.log_target_unconstrained(prop)
        ok = np.log(u) < lq - lp
        if ok:
            psi, lp = prop, lq
        if it < burn_in:
            if adapt:
                log_scale += ((1.0 if ok else 0.0) - goal) / (it + 1.0) ** 0.6
        else:
            accepted += ok
            j = it - burn_in
            if j % thin == 0:
                draws[kept] = target.cmap.to_model(psi)
                logt[kept] = lp - target.cmap.log_abs_jacobian(psi)
                kept += 1
    rate = accepted / (T * thin)
    if rate < 1e-3:
        raise ZeroAcceptance(f"acceptance rate {rate:.2e} after burn-in", "mh_sample")
    return Chain(draws, logt, float(rate), burn_in, thin, int(seed), float(np.exp(log_scale)),
                 tuple(target.model.param_names))


def mh_sample_chains(target, seeds, workers=None, **kwargs):
    """Independent chains, one per seed, run on a thread pool.

    Results come back in the order of ``seeds`` whatever the completion
    order, so merged output is deterministic. Keyword arguments go to
    :func:`mh_sample`.
    """
    from concurrent.futures import ThreadPoolExecutor

    seeds = list(seeds)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: mh_sample(target, seed=s, **kwargs), seeds))


def merge_chains(chains):
    """Concatenate chains in the given order; the acceptance rate is the draw-weighted mean."""
    if not chains:
        raise ValueError("no chains to merge")
    draws = np.concatenate([c.draws for c in chains])
    rate = sum(c.acceptance_rate * len(c.draws) for c in chains) / len(draws)
    first = chains[0]
    return Chain(draws, np.concatenate([c.log_target for c in chains]), float(rate), first.burn_in,
                 first.thin, first.seed, first.proposal_scale, first.param_names)


# ---------------------------------------------------------------------------
# Grids and normal approximation
# ---------------------------------------------------------------------------


def grid_posterior_1d(target, nodes):
    """Normalized SR-posterior of a scalar parameter on ``nodes``."""
    if target.dim != 1:
        raise ValueError("grid_posterior_1d needs a scalar parameter")
    nodes = np.asarray(nodes, dtype=float)
    lt = np.array([target.log_target([t]) for t in nodes])
    finite = np.isfinite(lt)
    if not finite.any():
        raise ZeroMass("log target is -inf on the whole grid", "grid_posterior_1d")
    vals = np.zeros_like(nodes)
    vals[finite] = np.exp(lt[finite] - lt[finite].max())
    return grid_normalize(Grid1D(nodes, vals))


@dataclass(frozen=True)
class NormalApprox:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def sd(self):
        return np.sqrt(np.diag(self.cov))

    def logpdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        d = self.mean.size
        x = theta.reshape(-1, d) - self.mean
        R = spd_factor(self.cov)
        z = np.linalg.solve(R.T, x.T)
        return -0.5 * (d * LOG_2PI + 2.0 * np.sum(np.log(np.diag(R))) + np.sum(z * z, axis=0))

    def pdf(self, theta):
        return np.exp(self.logpdf(theta))


def normal_approx(theta_tilde, H, n):
    """``N(theta_tilde, H^{-1} / n)``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    try:
        R = spd_factor(H)
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(f"H is not positive definite: {exc}", "normal_approx") from exc
    Rinv = np.linalg.inv(R)
    cov = Rinv @ Rinv.T / n
    return NormalApprox(np.atleast_1d(np.asarray(theta_tilde, dtype=float)), 0.5 * (cov + cov.T))


# ---------------------------------------------------------------------------
# Higher-order expansion
# ---------------------------------------------------------------------------


@dataclass
class ExpansionDensity:
    """Inputs of the asymptotic expansion of the SR-posterior of ``w = sqrt(n)(theta - theta_tilde)``.

    ``dlog_prior`` and ``d2log_prior`` are derivatives of ``log prior`` at
    ``theta_tilde``; ``S3`` (and ``S4`` for ``d = 1``) are derivatives of the
    total score at ``theta_tilde``.
    """

    theta_tilde: np.ndarray
    H: np.ndarray
    C: np.ndarray
    n: int
    dlog_prior: np.ndarray
    d2log_prior: np.ndarray
    S3: np.ndarray
    S4: Optional[float] = None
    order: int = 1

    def __post_init__(self):
        self.theta_tilde = np.atleast_1d(np.asarray(self.theta_tilde, dtype=float))
        d = self.theta_tilde.size
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.dlog_prior = np.asarray(self.dlog_prior, dtype=float).reshape(d)
        self.d2log_prior = np.asarray(self.d2log_prior, dtype=float).reshape(d, d)
        self.S3 = np.asarray(self.S3, dtype=float).reshape(d, d, d)
        if self.order not in (0, 1, 2):
            raise UnsupportedOrder(f"order {self.order} not in {{0, 1, 2}}", "expansion_density")
        if self.order == 2 and d != 1:
            raise UnsupportedOrder("order 2 is available for scalar parameters only", "expansion_density")
        if self.order == 2 and self.S4 is None:
            raise ValueError("order 2 needs the fourth score derivative S4")

    @property
    def dim(self):
        return self.theta_tilde.size

    def transformed_third(self):
        """``U_rst = S_ijk c_ir c_js c_kt / n`` by explicit loops."""
        d, C, S3 = self.dim, self.C, self.S3
        U = np.zeros((d, d, d))
        for r in range(d):
            for s in range(d):
                for t in range(d):
                    acc = 0.0
                    for i in range(d):
                        for j in range(d):
                            for k in range(d):
                                acc += S3[i, j, k] * C[i, r] * C[j, s] * C[k, t]
                    U[r, s, t] = acc / self.n
        return U

    def A1(self, w):
        """``(pi_i / pi) w^i - (1/6) (S_ijk / n) c_ir c_js c_kt w^r w^s w^t`` at rows of ``w``."""
        w = np.asarray(w, dtype=float).reshape(-1, self.dim)
        d = self.dim
        U = self.transformed_third()
        lin = np.zeros(len(w))
        cub = np.zeros(len(w))
        for i in range(d):
            lin += self.dlog_prior[i] * w[:, i]
        for r in range(d):
            for s in range(d):
                for t in range(d):
                    if U[r, s, t] != 0.0:
                        cub += U[r, s, t] * w[:, r] * w[:, s] * w[:, t]
        return lin - cub / 6.0

    def A2(self, w):
        """Second-order term for a scalar parameter, centred so it has zero mean under the normal."""
        w = np.asarray(w, dtype=float).ravel()
        h = 1.0 / self.H[0, 0]
        c = self.C[0, 0]
        p1 = self.dlog_prior[0]
        p2 = self.d2log_prior[0, 0] + p1 * p1
        s3 = self.S3[0, 0, 0] / self.n * c ** 3
        s4 = self.S4 / self.n * c ** 4
        R1, R2, R3, R4 = p1 * w, p2 * w ** 2, s3 * w ** 3, s4 * w ** 4
        return (0.5 * (R2 - p2 * h)
                - (R1 * R3 - 3.0 * p1 * s3 * h * h) / 6.0
                - (R4 - 3.0 * s4 * h * h) / 24.0
                + (R3 * R3 - 15.0 * s3 * s3 * h ** 3) / 72.0)

    def normal_logpdf(self, w):
        w = np.asarray(w, dtype=float).reshape(-1, self.dim)
        R = spd_factor(self.H)
        z = w @ R.T
        return -0.5 * (self.dim * LOG_2PI - 2.0 * np.sum(np.log(np.diag(R))) + np.sum(z * z, axis=1))

    def density(self, w):
        """Expansion density values at rows of ``w`` (may dip below zero far in the tails)."""
        base = np.exp(self.normal_logpdf(w))
        corr = np.ones(len(base))
        if self.order >= 1:
            corr += self.A1(w) / np.sqrt(self.n)
        if self.order == 2:
            corr += self.A2(w) / self.n
        return base * corr


def expansion_density(inputs, w_grid):
    """Expansion density of ``w`` on a 1-D grid as a :class:`Grid1D` (negative tails clipped to 0).

    For ``d > 1`` pass a ``(m, d)`` array of points and get the raw values.
    """
    if inputs.dim == 1:
        w = np.asarray(w_grid, dtype=float).ravel()
        return Grid1D(w, np.clip(inputs.density(w), 0.0, None))
    return inputs.density(w_grid)


def expansion_inputs(target, order=1):
    """Finite-difference expansion inputs at the target's ``theta_tilde``."""
    tt = target.theta_tilde
    d = tt.size
    if order == 2 and d != 1:
        raise UnsupportedOrder("order 2 is available for scalar parameters only", "expansion_inputs")
    logp = target.prior.log_density
    total = lambda t: float(np.sum(target.model.pointwise(target.data, np.atleast_1d(t))))
    if d == 1:
        t0 = float(tt[0])
        h = 1e-2 * max(abs(t0), 1e-2) if t0 != 0 else 1e-3
        lp1, lp2, _, _ = fd_derivatives_1d(lambda t: logp([t]), t0, h)
        _, _, s3, s4 = fd_derivatives_1d(total, t0, h)
        dlp, d2lp, S3, S4 = [lp1], [[lp2]], [[[s3]]], s4
    else:
        dlp = fd_gradient(logp, tt)
        d2lp = fd_hessian(logp, tt)
        S3 = fd_third(total, tt)
        S4 = None
    return ExpansionDensity(tt, target_curvature(target), target.C, target.n, dlp, d2lp, S3, S4, order)


# ---------------------------------------------------------------------------
# Summaries and CSV
# ---------------------------------------------------------------------------


def _weighted_quantiles(nodes, cdf, probs):
    return np.interp(probs, cdf, nodes)


def posterior_summaries(obj):
    """Mode, mean, sd and equal-tailed 95% interval of a grid or a chain."""
    if isinstance(obj, Grid1D):
        g = grid_normalize(obj)
        x, p = g.nodes, g.values
        mean = float(np.trapezoid(x * p, x))
        var = float(np.trapezoid((x - mean) ** 2 * p, x))
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(x))])
        cdf /= cdf[-1]
        lo, hi = _weighted_quantiles(x, cdf, [0.025, 0.975])
        return {"mode": float(x[np.argmax(p)]), "mean": mean, "sd": float(np.sqrt(var)),
                "lower95": float(lo), "upper95": float(hi)}
    if isinstance(obj, Chain):
        if len(obj.draws) == 0:
            raise ValueError("empty chain")
        D = obj.draws
        best = D[int(np.argmax(obj.log_target))]
        q = np.quantile(D, [0.025, 0.975], axis=0)
        return {"mode": best.tolist(), "mean": D.mean(axis=0).tolist(),
                "sd": D.std(axis=0, ddof=1).tolist(),
                "lower95": q[0].tolist(), "upper95": q[1].tolist()}
    raise TypeError("expected a Grid1D or a Chain")


def batch_means_se(draws, batches=20):
    """Monte-Carlo standard error of each posterior mean by non-overlapping batch means."""
    D = np.atleast_2d(np.asarray(draws, dtype=float).T).T
    size = len(D) // batches
    if size < 2:
        raise ValueError("chain too short for batch means")
    means = D[: size * batches].reshape(batches, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(batches)


def posterior_mode(target, start=None):
    """Maximizer of the log target by Nelder-Mead in the sampling coordinates.

    The objective omits the Jacobian, so the mode is that of the density in
    model coordinates.
    """
    from scipy import optimize

    psi0 = target.cmap.from_model(target.theta_tilde if start is None else start)

    def f(psi):
        lt = target.log_target(target.cmap.to_model(psi))
        return -lt if np.isfinite(lt) else np.inf

    res = optimize.minimize(f, psi0, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20_000,
                                     "adaptive": psi0.size > 2})
    if not np.isfinite(res.fun):
        raise ZeroMass("log target is -inf at the mode search end point", "posterior_mode")
    return target.cmap.to_model(res.x)


def _fmt(v):
    return repr(float(v))


def write_chain_csv(path, chain, names=None):
    names = list(names or chain.param_names or [f"theta{j}" for j in range(chain.draws.shape[1])])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["draw"] + names + ["log_target"]) + "\n")
        for k, (row, lt) in enumerate(zip(chain.draws, chain.log_target)):
            fh.write(",".join([str(k)] + [_fmt(v) for v in row] + [_fmt(lt)]) + "\n")


def write_grid_csv(path, grid, header=("theta", "density")):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for x, v in zip(grid.nodes, grid.values):
            fh.write(f"{_fmt(x)},{_fmt(v)}\n")


def read_grid_csv(path):
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Grid1D(arr[:, 0], arr[:, 1])
