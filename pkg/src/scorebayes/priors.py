"""Reference priors built from the Godambe information, the scalar chi-square prior,
baseline priors and change of variables."""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import DomainError, NotPositiveDefinite, SingularGamma, SingularJacobian
from .estimation import assemble_godambe
from .numerics import bessel_ratio_A1
from .scoring import as_data
from .transforms import CoordinateMap


# ---------------------------------------------------------------------------
# Prior specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorSpec:
    """Log prior density up to an additive constant.

    ``kind`` is one of ``flat``, ``power``, ``godambe_reference``,
    ``tabulated``, ``closed_form`` or ``transformed``. Tabulated priors keep
    their nodes, normalized log values and Monte-Carlo standard errors in
    ``table``.
    """

    kind: str
    dim: int
    logpdf: Callable
    label: str = ""
    table: Optional[dict] = field(default=None, compare=False)

    def log_density(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.size != self.dim:
            raise ValueError(f"prior of dimension {self.dim} got {theta.size} coordinates")
        return float(self.logpdf(theta))

    __call__ = log_density


def flat_prior(dim=1):
    return PriorSpec("flat", dim, lambda theta: 0.0, "flat")


def power_prior(exponent, index=0, dim=1):
    """``pi(theta) proportional to theta[index]**exponent`` on ``theta[index] > 0``."""

    def logpdf(theta):
        t = theta[index]
        if not t > 0.0:
            raise DomainError(f"power prior needs a positive coordinate {index}", "power_prior")
        return exponent * np.log(t)

    return PriorSpec("power", dim, logpdf, f"theta[{index}]^{exponent:g}")


def closed_form_prior(fn, dim=1, label="closed_form", kind="closed_form"):
    return PriorSpec(kind, dim, fn, label)


def tabulated_prior(nodes, log_values, mc_stderr=None, label="tabulated"):
    """Scalar prior from log values on a grid, normalized by the trapezoid rule.

    Evaluation interpolates the log density linearly; points outside the grid
    raise :class:`DomainError`.
    """
    nodes = np.asarray(nodes, dtype=float)
    logv = np.asarray(log_values, dtype=float)
    if nodes.ndim != 1 or nodes.size < 3 or np.any(np.diff(nodes) <= 0):
        raise ValueError("tabulated prior needs >= 3 strictly increasing nodes")
    if logv.shape != nodes.shape or not np.all(np.isfinite(logv)):
        raise ValueError("log values must be finite and aligned with the nodes")
    shift = logv.max()
    mass = np.trapezoid(np.exp(logv - shift), nodes)
    logv = logv - shift - np.log(mass)
    se = np.zeros_like(nodes) if mc_stderr is None else np.asarray(mc_stderr, dtype=float)
    lo, hi = nodes[0], nodes[-1]

    def logpdf(theta):
        t = theta[0]
        if not lo <= t <= hi:
            raise DomainError(f"{t} outside tabulated range [{lo}, {hi}]", "tabulated_prior")
        return np.interp(t, nodes, logv)

    return PriorSpec("tabulated", 1, logpdf, label,
                     {"theta": nodes, "log_prior": logv, "mc_stderr": se})


# ---------------------------------------------------------------------------
# Godambe reference priors
# ---------------------------------------------------------------------------


def _sqrt_det(G):
    G = np.atleast_2d(np.asarray(G, dtype=float))
    sign, logdet = np.linalg.slogdet(G)
    if sign <= 0:
        raise NotPositiveDefinite("Godambe matrix is not positive definite", "godambe_reference_prior")
    return float(np.exp(0.5 * logdet))


class MonteCarloGodambe:
    """Godambe matrix at ``theta`` from simulated data.

    ``sampler(rng, size, theta)`` draws ``size`` observations from the model at
    ``theta``; ``replicates`` datasets of ``n`` observations are pooled for
    ``K`` and ``J``, and a jackknife over replicates gives the standard error
    of ``sqrt(det G)``. Each grid point gets its own stream seeded by
    ``(seed, index)``; with ``common_random_numbers`` all points share one.
    """

    def __init__(self, model, sampler, replicates=200, n=500, seed=0,
                 common_random_numbers=False, use_identity=None):
        self.model = model
        self.sampler = sampler
        self.replicates = int(replicates)
        self.n = int(n)
        self.seed = int(seed)
        self.crn = common_random_numbers
        self.use_identity = use_identity

    def rng(self, index):
        key = [self.seed] if self.crn else [self.seed, int(index)]
        return np.random.default_rng(np.random.SeedSequence(key))

    def replicate_moments(self, theta, index=0):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        R, n, d = self.replicates, self.n, self.model.param_dim
        data = as_data(self.sampler(self.rng(index), R * n, theta))
        H = self.model.pointwise_hess(data, theta).reshape(R, n, d, d).mean(axis=1)
        s = self.model.pointwise_grad(data, theta).reshape(R, n, d)
        S = np.einsum("rni,rnj->rij", s, s) / n
        identity = self.model.information_identity if self.use_identity is None else self.use_identity
        return H, (H if identity else S)

    def estimate(self, theta, index=0):
        """Return ``(G, stderr of sqrt det G)``."""
        K_r, J_r = self.replicate_moments(theta, index)
        R = len(K_r)
        G = assemble_godambe(K_r.mean(axis=0), J_r.mean(axis=0), theta).G
        Ks, Js = K_r.sum(axis=0), J_r.sum(axis=0)
        jack = np.array([
            _sqrt_det(assemble_godambe((Ks - K_r[r]) / (R - 1), (Js - J_r[r]) / (R - 1), theta).G)
            for r in range(R)
        ])
        se = float(np.sqrt((R - 1) / R * np.sum((jack - jack.mean()) ** 2)))
        return G, se

    def __call__(self, theta, index=0):
        return self.estimate(theta, index)[0]


def godambe_reference_prior(theta, G_provider, index=0):
    """Unnormalized ``sqrt(det G(theta))``.

    ``G_provider`` is an analytic callable ``theta -> G`` or a
    :class:`MonteCarloGodambe`.
    """
    if isinstance(G_provider, MonteCarloGodambe):
        return _sqrt_det(G_provider(theta, index))
    return _sqrt_det(G_provider(np.atleast_1d(np.asarray(theta, dtype=float))))


def tabulate_reference_prior(nodes, G_provider, label="godambe_reference"):
    """Tabulated scalar ``sqrt(det G)`` prior; Monte-Carlo errors carried on the log scale."""
    nodes = np.asarray(nodes, dtype=float)
    vals = np.empty_like(nodes)
    ses = np.zeros_like(nodes)
    for k, t in enumerate(nodes):
        if isinstance(G_provider, MonteCarloGodambe):
            G, se = G_provider.estimate([t], k)
            vals[k] = _sqrt_det(G)
            ses[k] = se / vals[k]
        else:
            vals[k] = godambe_reference_prior([t], G_provider)
    return tabulated_prior(nodes, np.log(vals), ses, label)


def godambe_prior_spec(G_provider, dim, label="godambe_reference"):
    """Reference prior as a :class:`PriorSpec` from an analytic Godambe callable."""
    return PriorSpec("godambe_reference", dim,
                     lambda theta: 0.5 * np.linalg.slogdet(np.atleast_2d(G_provider(theta)))[1], label)


# --- von Mises ----------------------------------------------------------------


def _a1_over_kappa(kappa):
    k = np.asarray(kappa, dtype=float)
    if np.any(k <= 0.0):
        raise DomainError("kappa must be positive", "vmf_reference_prior")
    return np.asarray(bessel_ratio_A1(k)) / k


def vmf_godambe(kappa):
    """Godambe information of the Hyvarinen concentration estimator, ``A1^2 / (kappa (2 kappa - 3 A1))``."""
    r = _a1_over_kappa(kappa)
    out = r * r / (2.0 - 3.0 * r)
    return float(out) if out.ndim == 0 else out


def vmf_sandwich_variance(kappa):
    """Asymptotic variance ``kappa (2 kappa - 3 A1) / A1^2`` of the concentration estimator."""
    return 1.0 / vmf_godambe(kappa)


def vmf_reference_prior(kappa):
    """``sqrt(A1^2 / (kappa (2 kappa - 3 A1)))``, written through ``A1 / kappa``.

    The ratio form has no cancellation as ``kappa -> 0`` where the prior
    tends to ``2**-0.5``.
    """
    r = _a1_over_kappa(kappa)
    out = r / np.sqrt(2.0 - 3.0 * r)
    return float(out) if out.ndim == 0 else out


# --- Tsallis regression -----------------------------------------------------------


def tsallis_regression_variances(gamma, sigma2):
    """Asymptotic variances ``(v_beta, v_e)`` of the Tsallis regression estimators.

    ``v_beta`` is per coordinate of ``(X^T X)^{1/2} (beta_hat - beta)`` and
    ``v_e`` that of ``sqrt(n) (sigma2_hat - sigma2)``.
    """
    if not gamma >= 1.0:
        raise DomainError("gamma must be >= 1", "tsallis_regression_variances")
    if not sigma2 > 0.0:
        raise DomainError("sigma2 must be positive", "tsallis_regression_variances")
    a2 = (gamma - 1.0) ** 2
    base = 1.0 + a2 / (2.0 * gamma - 1.0)
    v_beta = sigma2 * base ** 1.5
    v_e = 4.0 * sigma2 ** 2 / (2.0 + a2) ** 2 * (2.0 * (1.0 + 2.0 * a2) * base ** 2.5 - a2 * gamma ** 2)
    return v_beta, v_e


def regression_reference_prior(gamma, p):
    """Reference prior on ``(beta_1..beta_p, sigma2)``: ``(v_beta^p v_e)^{-1/2}``, flat in beta."""
    def logpdf(theta):
        s2 = theta[p]
        if not s2 > 0.0:
            raise DomainError("sigma2 must be positive", "regression_reference_prior")
        vb, ve = tsallis_regression_variances(gamma, s2)
        return -0.5 * (p * np.log(vb) + np.log(ve))

    return PriorSpec("godambe_reference", p + 1, logpdf, f"regression_reference(gamma={gamma:g})")


# ---------------------------------------------------------------------------
# Change of variables
# ---------------------------------------------------------------------------


def transform_prior(prior, cmap=None, to_model=None, jacobian=None, label=None):
    """Prior on ``psi`` from a prior on ``theta = theta(psi)``.

    Give either a diagonal :class:`CoordinateMap` or ``to_model`` together
    with a ``jacobian(psi)`` returning ``d theta / d psi``.
    """
    if cmap is not None:
        if not isinstance(cmap, CoordinateMap):
            raise TypeError("cmap must be a CoordinateMap")

        def logpdf(psi):
            lj = cmap.log_abs_jacobian(psi)
            if not np.isfinite(lj):
                raise SingularJacobian("Jacobian of the coordinate map vanishes", "transform_prior")
            return prior.log_density(cmap.to_model(psi)) + lj

        name = label or f"{prior.label} in {cmap}"
    else:
        if to_model is None or jacobian is None:
            raise ValueError("need a CoordinateMap or to_model with jacobian")

        def logpdf(psi):
            Jm = np.atleast_2d(np.asarray(jacobian(psi), dtype=float))
            sign, logdet = np.linalg.slogdet(Jm)
            if sign == 0 or not np.isfinite(logdet):
                raise SingularJacobian("Jacobian of the coordinate map is singular", "transform_prior")
            return prior.log_density(to_model(psi)) + logdet

        name = label or f"{prior.label} transformed"
    return PriorSpec("transformed", prior.dim, logpdf, name)


# ---------------------------------------------------------------------------
# Scalar chi-square prior
# ---------------------------------------------------------------------------


@dataclass
class ChiSqPriorInputs:
    """Scalar inputs of the chi-square prior: callables of theta or arrays on the grid.

    ``g`` Godambe information, ``i`` Fisher information, ``sigma`` the scaled
    covariance ``n Cov(theta_tilde, theta_hat)``, ``a_S`` and ``a_L`` the
    third-derivative terms of the score and of the log-likelihood.
    """

    g: object
    i: object
    sigma: object
    a_S: object
    a_L: object
    stderr: dict = field(default_factory=dict)

    def on_grid(self, nodes):
        def ev(v):
            if callable(v):
                return np.array([float(v(t)) for t in nodes])
            arr = np.asarray(v, dtype=float)
            return np.broadcast_to(arr, nodes.shape).astype(float)

        return {k: ev(getattr(self, k)) for k in ("g", "i", "sigma", "a_S", "a_L")}


def chisq_score_slope(nodes, inputs):
    """``d log pi / d theta`` of the scalar chi-square prior on the grid."""
    nodes = np.asarray(nodes, dtype=float)
    v = inputs.on_grid(nodes)
    g, i, sig = v["g"], v["i"], v["sigma"]
    if np.any(g <= 0) or np.any(i <= 0):
        raise DomainError("g and i must be positive", "chi_square_prior_scalar")
    denom = 1.0 / g - 4.0 / i + 4.0 * sig
    bad = np.abs(denom) < 1e-12
    if bad.any():
        raise SingularGamma(f"1/g - 4/i + 4 sigma vanishes at theta={nodes[bad][0]}",
                            "chi_square_prior_scalar")
    m = 5.0 / g - 4.0 * sig
    dlog_g = np.gradient(np.log(g), nodes, edge_order=2)
    dm = np.gradient(m, nodes, edge_order=2)
    return 0.25 * (6.0 * v["a_S"] / g + 4.0 * v["a_L"] / i + dlog_g * m + 2.0 * dm) / denom


def chisq_log_prior(nodes, inputs, anchor=None):
    """Log prior by cumulative trapezoid of the slope, zero at ``nodes[anchor]``."""
    y = chisq_score_slope(nodes, inputs)
    logp = cumulative_trapezoid(y, nodes, initial=0.0)
    if anchor is not None:
        logp = logp - logp[anchor]
    return logp


def chi_square_prior_scalar(nodes, inputs, batches=None, label="chi_square"):
    """Tabulated scalar chi-square prior.

    ``batches`` optionally holds inputs estimated on disjoint Monte-Carlo
    batches; the spread of their log priors (anchored at the central node)
    gives the reported standard error.
    """
    nodes = np.asarray(nodes, dtype=float)
    mid = nodes.size // 2
    logp = chisq_log_prior(nodes, inputs, anchor=mid)
    se = None
    if batches:
        curves = np.array([chisq_log_prior(nodes, b, anchor=mid) for b in batches])
        se = curves.std(axis=0, ddof=1) / np.sqrt(len(curves))
    return tabulated_prior(nodes, logp, se, label)


def chisq_inputs_from_moments(K, J, i, sigma, B_S, B_L):
    """Assemble ``(g, a_S, a_L)`` from scalar sensitivity, variability and third-derivative means."""
    g = K * K / J
    c = np.sqrt(g / K)
    return ChiSqPriorInputs(g=g, i=i, sigma=sigma, a_S=B_S * c ** 3 / g, a_L=B_L / i)


def _third_pointwise(model, data, theta):
    h = 1e-4 * max(1.0, abs(theta))
    Hp = model.pointwise_hess(data, [theta + h])[:, 0, 0]
    Hm = model.pointwise_hess(data, [theta - h])[:, 0, 0]
    return (Hp - Hm) / (2.0 * h)


def chisq_inputs_monte_carlo(nodes, score_model, loglik_model, sampler, tilde=None, hat=None,
                             n=100, replicates=1000, seed=0, batches=20, sigma_method="plugin"):
    """Monte-Carlo chi-square inputs on a grid with common random numbers.

    ``sampler(rng, size, theta)`` simulates ``replicates`` datasets of ``n``
    rows. ``sigma`` is the leading-order ``n Cov(theta_tilde, theta_hat)``:
    with ``sigma_method="plugin"`` it is ``E[S' L'] / (K i)`` from
    per-observation gradients, with ``"replicates"`` the covariance of the
    estimates ``tilde(data)`` and ``hat(data)`` across replicates. Returns the
    pooled inputs and one input set per batch of replicates.
    """
    if sigma_method not in ("plugin", "replicates"):
        raise ValueError("sigma_method must be 'plugin' or 'replicates'")
    if sigma_method == "replicates" and (tilde is None or hat is None):
        raise ValueError("replicate covariance needs tilde and hat estimators")
    nodes = np.asarray(nodes, dtype=float)
    R = int(replicates)
    nb = int(batches)
    if R % nb:
        raise ValueError("replicates must be a multiple of batches")
    plugin = sigma_method == "plugin"
    fields = ("K", "J", "i", "B_S", "B_L") + (("SL",) if plugin else ("sigma",))
    pooled = {k: np.empty(nodes.size) for k in fields}
    per_batch = {k: np.empty((nb, nodes.size)) for k in fields}
    for k, t in enumerate(nodes):
        data = as_data(sampler(np.random.default_rng(np.random.SeedSequence([seed])), R * n, t))
        s = score_model.pointwise_grad(data, [t])[:, 0]
        H = score_model.pointwise_hess(data, [t])[:, 0, 0]
        Hl = loglik_model.pointwise_hess(data, [t])[:, 0, 0]
        T = _third_pointwise(score_model, data, t)
        Tl = _third_pointwise(loglik_model, data, t)
        obs = {"K": H, "J": s * s, "i": Hl, "B_S": T, "B_L": -Tl}
        if plugin:
            obs["SL"] = s * loglik_model.pointwise_grad(data, [t])[:, 0]
        for name, arr in obs.items():
            pooled[name][k] = arr.mean()
            per_batch[name][:, k] = arr.reshape(nb, -1).mean(axis=1)
        if not plugin:
            est = np.array([[tilde(r), hat(r)] for r in data.reshape(R, n, -1)])
            dev = est - est.mean(axis=0)
            pooled["sigma"][k] = n * np.mean(dev[:, 0] * dev[:, 1])
            eb = est.reshape(nb, -1, 2)
            eb = eb - eb.mean(axis=1, keepdims=True)
            per_batch["sigma"][:, k] = n * np.mean(eb[:, :, 0] * eb[:, :, 1], axis=1)

    def build(d):
        sigma = d["SL"] / (d["K"] * d["i"]) if plugin else d["sigma"]
        return chisq_inputs_from_moments(d["K"], d["J"], d["i"], sigma, d["B_S"], d["B_L"])

    inputs = build(pooled)
    batch_inputs = [build({f: per_batch[f][b] for f in fields}) for b in range(nb)]
    for name in ("g", "i", "sigma", "a_S", "a_L"):
        vals = np.array([np.asarray(getattr(b, name)) for b in batch_inputs])
        inputs.stderr[name] = vals.std(axis=0, ddof=1) / np.sqrt(nb)
    return inputs, batch_inputs


# ---------------------------------------------------------------------------
# Equi-correlated normal
# ---------------------------------------------------------------------------


def eqcorr_rho_bounds(q):
    return -1.0 / (q - 1.0), 1.0


def eqcorr_log_det_godambe(q, rho_nodes, free=("mu", "sigma2", "rho"), replicates=200, n=500, seed=0):
    """``log det G`` of the pairwise score at ``mu = 0, sigma2 = 1`` over a rho grid.

    Common random numbers across the grid keep the curve smooth. Returns
    ``(log det G, stderr)``.
    """
    from .models import sample_eqcorr
    from .scoring import pairwise_eqcorr_model

    free = tuple(free)
    base = {"mu": 0.0, "sigma2": 1.0, "rho": 0.0}
    model = pairwise_eqcorr_model(q, free, {k: v for k, v in base.items() if k not in free})
    out = np.empty(len(rho_nodes))
    se = np.empty(len(rho_nodes))
    for k, rho in enumerate(rho_nodes):
        theta = np.array([dict(base, rho=rho)[f] for f in free])

        def sampler(rng, size, th, rho=rho):
            return sample_eqcorr(rng, size, q, 0.0, 1.0, rho)

        mc = MonteCarloGodambe(model, sampler, replicates, n, seed, common_random_numbers=True)
        G, s = mc.estimate(theta)
        val = _sqrt_det(G)
        out[k] = 2.0 * np.log(val)
        se[k] = 2.0 * s / val
    return out, se


def eqcorr_reference_prior(q, rho_nodes, log_det, free=("mu", "sigma2", "rho")):
    """Reference prior on the free subset of ``(mu, sigma2, rho)``.

    ``log_det`` is ``log det G`` at unit variance on ``rho_nodes``; the
    variance enters as ``sigma2**(-m/2)`` with ``m`` the number of free
    ``sigma2``-scaled rows (two per sigma2, one per mu). Outside the rho grid
    evaluation fails.
    """
    rho_nodes = np.asarray(rho_nodes, dtype=float)
    log_det = np.asarray(log_det, dtype=float)
    free = tuple(free)
    power = (1.0 if "mu" in free else 0.0) + (2.0 if "sigma2" in free else 0.0)
    lo, hi = rho_nodes[0], rho_nodes[-1]

    def logpdf(theta):
        vals = dict(zip(free, theta))
        rho = vals.get("rho")
        out = 0.0
        if rho is not None:
            if not lo <= rho <= hi:
                raise DomainError(f"rho={rho} outside tabulated range [{lo}, {hi}]", "eqcorr_reference_prior")
            out += 0.5 * np.interp(rho, rho_nodes, log_det)
        if "sigma2" in vals:
            s2 = vals["sigma2"]
            if not s2 > 0.0:
                raise DomainError("sigma2 must be positive", "eqcorr_reference_prior")
            out -= 0.5 * power * np.log(s2)
        return out

    return PriorSpec("godambe_reference", len(free), logpdf, f"eqcorr_reference(q={q})",
                     {"theta": rho_nodes, "log_prior": 0.5 * log_det, "mc_stderr": np.zeros_like(rho_nodes)})


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


PRIOR_CSV_HEADER = "theta,log_prior,mc_stderr"


def prior_grid_values(prior, nodes):
    """``(theta, log_prior, mc_stderr)`` columns for a scalar prior on ``nodes``."""
    nodes = np.asarray(nodes, dtype=float)
    if prior.table is not None and prior.kind == "tabulated" and np.array_equal(prior.table["theta"], nodes):
        return nodes, prior.table["log_prior"], prior.table["mc_stderr"]
    return nodes, np.array([prior.log_density([t]) for t in nodes]), np.zeros_like(nodes)


def write_prior_csv(path, prior, nodes=None):
    if nodes is None:
        if prior.table is None:
            raise ValueError("non-tabulated prior needs explicit nodes")
        nodes = prior.table["theta"]
    cols = prior_grid_values(prior, nodes)
    with open(path, "w", newline="") as fh:
        fh.write(PRIOR_CSV_HEADER + "\n")
        for row in zip(*cols):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_prior_csv(path, label="tabulated"):
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return tabulated_prior(arr[:, 0], arr[:, 1], arr[:, 2], label)
