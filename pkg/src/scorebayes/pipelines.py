"""Example pipelines behind the command-line interface.

Every pipeline returns a :class:`RunResult`: a JSON-ready bundle plus a
mapping of output file names to CSV text. Nothing touches the disk here, so
a failing run leaves no partial outputs.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .errors import ConfigError, DegenerateSample
from .estimation import (
    godambe_at,
    minimize_total_score,
    vmf_kappa_closed_form,
    vonmises_kappa_estimate,
)
from .io import csv_text, read_dataset
from .models import (
    sample_eqcorr,
    sample_linreg_contaminated,
    sample_vonmises,
    synthetic_design,
)
from .posterior import (
    Chain,
    batch_means_se,
    build_target,
    grid_posterior_1d,
    mh_sample,
    posterior_mode,
    posterior_summaries,
    target_curvature,
)
from .priors import (
    closed_form_prior,
    eqcorr_log_det_godambe,
    eqcorr_reference_prior,
    eqcorr_rho_bounds,
    flat_prior,
    power_prior,
    regression_reference_prior,
    tabulated_prior,
    transform_prior,
    tsallis_regression_variances,
    vmf_reference_prior,
    vmf_sandwich_variance,
    MonteCarloGodambe,
)
from .scoring import (
    linreg_score,
    normal_hyvarinen_score,
    normal_log_score,
    normal_tsallis_score,
    pairwise_eqcorr_model,
    reparametrize,
    vonmises_kappa_hyvarinen_score,
    vonmises_kappa_log_score,
)
from .transforms import IDENTITY, LOG, LOG_SD, CoordinateMap, scaled_logit

SCHEMA_VERSION = "1.0"
COMMANDS = ("estimate", "sample", "prior-eval", "reproduce")
SUMMARY_HEADER = ("mode", "mean", "sd", "lower95", "upper95")

# RNG stream tags under the run seed
DATA, MCMC, PRIOR, REPLICATES = 0, 1, 2, 3


def substream(seed, *tags):
    """Deterministic 63-bit child seed of ``seed`` for the given tags."""
    ss = np.random.SeedSequence([int(seed), *map(int, tags)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def replicate_map(fn, items, workers=None):
    """``[fn(x) for x in items]`` on a thread pool; results keep the order of ``items``."""
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class RunResult:
    bundle: dict
    files: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _mcmc_settings(cfg):
    T = cfg.get("T", 10_000)
    burn = cfg.get("burn_in", 2_000)
    thin = cfg.get("thin", 1)
    if T < 1000:
        raise ConfigError(f"T = {T}: at least 1000 post-burn-in draws are required", "config")
    if burn < 0 or thin < 1:
        raise ConfigError("burn_in must be >= 0 and thin >= 1", "config")
    return T, burn, thin


def _summary_lists(s):
    return {k: np.atleast_1d(np.asarray(s[k], dtype=float)).tolist() for k in SUMMARY_HEADER}


def chain_summary(chain, names):
    out = _summary_lists(posterior_summaries(chain))
    out["mc_se"] = batch_means_se(chain.draws).tolist()
    out["acceptance_rate"] = chain.acceptance_rate
    out["param_names"] = list(names)
    return out


def grid_summary(grid, name):
    out = _summary_lists(posterior_summaries(grid))
    out["param_names"] = [name]
    return out


def chain_text(chain, names):
    rows = ([k, *row, lt] for k, (row, lt) in enumerate(zip(chain.draws, chain.log_target)))
    return csv_text(["draw", *names, "log_target"], rows)


def grid_text(grid):
    return csv_text(["theta", "density"], zip(grid.nodes, grid.values))


def prior_text(prior):
    t = prior.table
    return csv_text(["theta", "log_prior", "mc_stderr"], zip(t["theta"], t["log_prior"], t["mc_stderr"]))


def _summary_rows(prefix, summ):
    for j, name in enumerate(summ["param_names"]):
        yield [*prefix, name, *(summ[k][j] for k in SUMMARY_HEADER)]


def make_bundle(command, example, cfg, names, theta_tilde=None, godambe=None, summaries=None, extra=None):
    return {
        "schema_version": SCHEMA_VERSION,
        "software_version": __version__,
        "command": command,
        "example": example,
        "seed": cfg.seed,
        "config": dict(cfg.values),
        "param_names": list(names),
        "theta_tilde": None if theta_tilde is None else np.atleast_1d(theta_tilde).tolist(),
        "godambe": None if godambe is None else godambe.summary(),
        "posterior_summaries": summaries or {},
        "extra": extra or {},
    }


def _sample_in(target_builder, cmap, names, seed, cfg):
    """Run MH on a target built in coordinates ``xi`` and report draws in model coordinates."""
    T, burn, thin = _mcmc_settings(cfg)
    target = target_builder()
    ch = mh_sample(target, T=T, burn_in=burn, seed=seed, thin=thin)
    if cmap is None:
        return target, Chain(ch.draws, ch.log_target, ch.acceptance_rate, ch.burn_in, ch.thin,
                             ch.seed, ch.proposal_scale, tuple(names))
    theta = np.array([cmap.to_model(x) for x in ch.draws])
    logt = np.array([lt - cmap.log_abs_jacobian(x) for x, lt in zip(ch.draws, ch.log_target)])
    return target, Chain(theta, logt, ch.acceptance_rate, ch.burn_in, ch.thin, ch.seed,
                         ch.proposal_scale, tuple(names))


# ---------------------------------------------------------------------------
# von Mises concentration
# ---------------------------------------------------------------------------


VMF_SWEEP = ((10, 1.0), (30, 1.0), (50, 1.0), (10, 5.0), (30, 5.0), (50, 5.0))


def vmf_prior(kind):
    if kind == "reference":
        return closed_form_prior(lambda t: np.log(vmf_reference_prior(t[0])), 1, "vmf_reference")
    if kind == "inverse":
        return power_prior(-1.0)
    if kind == "flat":
        return closed_form_prior(lambda t: 0.0 if t[0] > 0.0 else -np.inf, 1, "flat")
    raise ConfigError(f"vmf prior must be reference, inverse or flat, got {kind!r}", "config")


def vmf_grid(kappa_tilde, n, points=400, width=12.0):
    """Positive concentration grid centred at ``kappa_tilde``, ``width`` sandwich sds each side."""
    sd = np.sqrt(vmf_sandwich_variance(max(kappa_tilde, 0.05)) / n)
    lo, hi = kappa_tilde - width * sd, kappa_tilde + width * sd
    if lo <= 0.0:
        return np.linspace(0.0, hi, points + 1)[1:]
    return np.linspace(lo, hi, points)


def vmf_posterior_grid(angles, prior, nodes, calibrate=True, theta0=0.0, kappa_tilde=None):
    model = vonmises_kappa_hyvarinen_score(theta0)
    kt = vonmises_kappa_estimate(angles, theta0) if kappa_tilde is None else kappa_tilde
    target = build_target(model, angles, prior, theta_tilde=[kt], calibrate=calibrate)
    return target, grid_posterior_1d(target, nodes)


def vmf_full_posterior_grid(angles, prior, nodes, theta0=0.0, kappa_init=1.0):
    model = vonmises_kappa_log_score(theta0)
    target = build_target(model, angles, prior, theta_init=[max(kappa_init, 0.1)],
                          cmap=CoordinateMap([LOG]))
    return target, grid_posterior_1d(target, nodes)


def vmf_calibration_replicate(seed, n=50, kappa=3.0, points=400):
    """One replicate of the calibration study: calibrated and uncalibrated posterior sds."""
    x = sample_vonmises(seed, n, 0.0, kappa)
    kt = vonmises_kappa_estimate(x)
    if kt <= 0.0:
        raise DegenerateSample("concentration estimate is zero", "vonmises_kappa_estimate")
    nodes = vmf_grid(kt, n, points)
    prior = vmf_prior("reference")
    _, cal = vmf_posterior_grid(x, prior, nodes, True, kappa_tilde=kt)
    _, unc = vmf_posterior_grid(x, prior, nodes, False, kappa_tilde=kt)
    sd_cal = posterior_summaries(cal)["sd"]
    sd_unc = posterior_summaries(unc)["sd"]
    return {"kappa_tilde": kt, "sd_calibrated": sd_cal, "sd_uncalibrated": sd_unc,
            "sandwich_sd": float(np.sqrt(vmf_sandwich_variance(kt) / n))}


def _vmf_data(cfg):
    theta0 = cfg.get("theta0", 0.0)
    if cfg.get("data"):
        ds = read_dataset(cfg.get("data"))
        x = ds.column("angle") if "angle" in ds.columns else ds.values[:, 0]
        return np.asarray(x, dtype=float), theta0
    n, kappa = cfg.get("n", 50), cfg.get("kappa", 3.0)
    if n < 2 or not kappa >= 0.0:
        raise ConfigError("vmf needs n >= 2 and kappa >= 0", "config")
    return sample_vonmises(substream(cfg.seed, DATA), n, theta0, kappa), theta0


def vmf_run(command, cfg):
    if command == "reproduce":
        return vmf_reproduce(cfg)
    x, theta0 = _vmf_data(cfg)
    n = len(x)
    model = vonmises_kappa_hyvarinen_score(theta0)
    kt = vonmises_kappa_estimate(x, theta0)
    if kt <= 0.0:
        raise DegenerateSample("concentration estimate is zero", "vonmises_kappa_estimate")
    g = godambe_at(model, x, [kt])
    names = ("kappa",)
    extra = {"kappa_tilde": kt, "sandwich_variance": vmf_sandwich_variance(kt),
             "n": n, "theta0": theta0}
    try:
        extra["kappa_closed_form"] = vmf_kappa_closed_form(x)
    except DegenerateSample:
        extra["kappa_closed_form"] = None
    files, summaries = {}, {}
    prior_kind = cfg.get("prior", "reference")
    if command == "sample":
        prior = vmf_prior(prior_kind)
        calibrate = cfg.get("calibrate", True)
        _, chain = _sample_in(
            lambda: build_target(model, x, prior, theta_tilde=[kt], calibrate=calibrate,
                                 cmap=CoordinateMap([LOG]), godambe=g),
            None, names, substream(cfg.seed, MCMC), cfg)
        files["chain.csv"] = chain_text(chain, names)
        summaries["sr_posterior"] = chain_summary(chain, names)
    elif command == "prior-eval":
        files["prior_grid.csv"], extra["prior"] = _vmf_prior_eval(cfg, kt, n)
    return RunResult(make_bundle(command, "vmf", cfg, names, [kt], g, summaries, extra), files)


def _vmf_prior_eval(cfg, kt, n):
    points = cfg.get("grid_points", 200)
    hi = max(3.0 * kt, 10.0)
    nodes = np.linspace(hi / points, hi, points)
    method = cfg.get("prior_method", "closed_form")
    if method == "closed_form":
        prior = tabulated_prior(nodes, np.log(vmf_reference_prior(nodes)), label="vmf_reference")
    elif method == "monte_carlo":
        mc = MonteCarloGodambe(
            vonmises_kappa_hyvarinen_score(), lambda rng, size, th: sample_vonmises(rng, size, 0.0, th[0]),
            cfg.get("replicates", 200), cfg.get("mc_n", 500), substream(cfg.seed, PRIOR))
        vals, ses = np.empty(points), np.empty(points)
        for k, t in enumerate(nodes):
            G, se = mc.estimate([t], k)
            vals[k] = np.sqrt(G[0, 0])
            ses[k] = se / vals[k]
        prior = tabulated_prior(nodes, np.log(vals), ses, "vmf_reference_mc")
    else:
        raise ConfigError(f"prior_method must be closed_form or monte_carlo, got {method!r}", "config")
    return prior_text(prior), {"method": method, "limit_at_zero": vmf_reference_prior(1e-4)}


def vmf_reproduce(cfg):
    seed = cfg.seed
    points = cfg.get("grid_points", 400)
    files = {}

    kk = np.linspace(0.01, 10.0, 400)
    files["prior_curves.csv"] = csv_text(["kappa", "reference_prior", "inverse_kappa"],
                                         zip(kk, vmf_reference_prior(kk), 1.0 / kk))

    # calibrated vs uncalibrated vs full likelihood, inverse prior
    x = sample_vonmises(substream(seed, DATA), 50, 0.0, 3.0)
    kt = vonmises_kappa_estimate(x)
    nodes = vmf_grid(kt, len(x), points)
    inv = vmf_prior("inverse")
    _, cal = vmf_posterior_grid(x, inv, nodes, True, kappa_tilde=kt)
    tgt_unc, unc = vmf_posterior_grid(x, inv, nodes, False, kappa_tilde=kt)
    tgt_full, full = vmf_full_posterior_grid(x, inv, nodes, kappa_init=kt)
    files["fig1_sample.csv"] = csv_text(["angle"], ([v] for v in x))
    files["fig1_posteriors.csv"] = csv_text(["kappa", "calibrated", "uncalibrated", "full_likelihood"],
                                            zip(nodes, cal.values, unc.values, full.values))
    summ = {"calibrated": grid_summary(cal, "kappa"), "uncalibrated": grid_summary(unc, "kappa"),
            "full_likelihood": grid_summary(full, "kappa")}
    files["fig1_summary.csv"] = csv_text(
        ["posterior", "param", *SUMMARY_HEADER],
        (r for k, s in summ.items() for r in _summary_rows([k], s)))

    # concentration sweep, reference vs inverse prior
    sweep_rows = []
    for idx, (n, kappa) in enumerate(VMF_SWEEP):
        xs = sample_vonmises(substream(seed, DATA, 1 + idx), n, 0.0, kappa)
        kts = vonmises_kappa_estimate(xs)
        grid = vmf_grid(kts, n, points)
        cols = {}
        for kind in ("reference", "inverse"):
            _, gp = vmf_posterior_grid(xs, vmf_prior(kind), grid, True, kappa_tilde=kts)
            cols[kind] = gp
            s = posterior_summaries(gp)
            sweep_rows.append([n, kappa, kts, kind, *(s[k] for k in SUMMARY_HEADER)])
        files[f"sweep_n{n}_kappa{kappa:g}.csv"] = csv_text(
            ["kappa", "reference", "inverse"], zip(grid, cols["reference"].values, cols["inverse"].values))
    files["sweep_summary.csv"] = csv_text(
        ["n", "kappa_true", "kappa_tilde", "prior", *SUMMARY_HEADER], sweep_rows)

    reps = cfg.get("replicates", 200)
    reps_out = replicate_map(lambda r: vmf_calibration_replicate(substream(seed, REPLICATES, r)), range(reps))
    rows = [[r, d["kappa_tilde"], d["sd_calibrated"], d["sd_uncalibrated"], d["sandwich_sd"]]
            for r, d in enumerate(reps_out)]
    arr = np.array([row[1:] for row in rows])
    files["calibration_replicates.csv"] = csv_text(
        ["replicate", "kappa_tilde", "sd_calibrated", "sd_uncalibrated", "sandwich_sd"], rows)
    extra = {
        "kappa_tilde": kt,
        "calibration": {
            "replicates": reps,
            "median_calibrated_over_sandwich": float(np.median(arr[:, 1] / arr[:, 3])),
            "median_uncalibrated_over_calibrated": float(np.median(arr[:, 2] / arr[:, 1])),
        },
    }
    g = godambe_at(vonmises_kappa_hyvarinen_score(), x, [kt])
    return RunResult(make_bundle("reproduce", "vmf", cfg, ("kappa",), [kt], g, summ, extra), files)


# ---------------------------------------------------------------------------
# Equi-correlated normal, pairwise likelihood
# ---------------------------------------------------------------------------


EQCORR_SCENARIOS = {"s1": (10, 10, (0.0, 1.0, 0.5)), "s2": (10, 4, (0.0, 0.5, 0.1))}
EQCORR_PRIORS = ("flat_theta", "flat_xi", "reference")
EQCORR_RHO_ONLY = tuple((q, rho) for q in (3, 5, 10) for rho in (0.1, 0.5, 0.8))
# rho support in scaled-logit units; the reference prior is tabulated over it
LOGIT_RANGE = 10.0


def eqcorr_xi_map(q, free):
    """Unconstrained coordinates: identity for mu, log sd for sigma2, scaled logit for rho."""
    link = scaled_logit(*eqcorr_rho_bounds(q))
    parts = {"mu": IDENTITY, "sigma2": LOG_SD, "rho": link}
    return CoordinateMap([parts[f] for f in free])


def eqcorr_rho_nodes(q, count=61):
    link = scaled_logit(*eqcorr_rho_bounds(q))
    return link.to_model(np.linspace(-LOGIT_RANGE, LOGIT_RANGE, count))


def eqcorr_prior(kind, q, free, seed=0, replicates=200, mc_n=500, nodes=61):
    """Priors on the free subset of ``(mu, sigma2, rho)``.

    ``flat_theta``: ``1/sigma`` on ``(mu, sigma, rho)``; ``flat_xi``: flat on the
    unconstrained coordinates; ``reference``: Monte-Carlo tabulated
    ``sqrt(det G)``.
    """
    free = tuple(free)
    lo, hi = eqcorr_rho_bounds(q)
    if kind == "reference":
        rho_nodes = eqcorr_rho_nodes(q, nodes)
        log_det, _ = eqcorr_log_det_godambe(q, rho_nodes, free, replicates, mc_n, seed)
        return eqcorr_reference_prior(q, rho_nodes, log_det, free)

    def logpdf(theta):
        v = dict(zip(free, theta))
        out = 0.0
        if "sigma2" in v:
            out -= np.log(v["sigma2"])
        if kind == "flat_xi" and "rho" in v:
            out -= np.log((v["rho"] - lo) * (hi - v["rho"]))
        return out

    if kind not in ("flat_theta", "flat_xi"):
        raise ConfigError(f"eqcorr prior must be one of {EQCORR_PRIORS}, got {kind!r}", "config")
    return closed_form_prior(logpdf, len(free), kind)


def _rho_index(free):
    return tuple(free).index("rho") if "rho" in free else None


def eqcorr_target(x, q, free, known, prior, theta_tilde=None):
    """Calibrated target in unconstrained coordinates, rho limited to the tabulated logit range."""
    free = tuple(free)
    model = pairwise_eqcorr_model(q, free, known)
    xmap = eqcorr_xi_map(q, free)
    if theta_tilde is None:
        theta_tilde = eqcorr_estimate(x, q, free, known)
    mx = reparametrize(model, xmap, tuple(f"xi_{f}" for f in free))
    pxi = transform_prior(prior, xmap)
    ri = _rho_index(free)

    def logpdf(xi):
        if ri is not None and abs(xi[ri]) > LOGIT_RANGE:
            return -np.inf
        return pxi.log_density(xi)

    target = build_target(mx, x, closed_form_prior(logpdf, len(free), prior.label),
                          theta_tilde=xmap.from_model(theta_tilde))
    return target, xmap


def eqcorr_start(x, q, free, known):
    lo, hi = eqcorr_rho_bounds(q)
    c = np.corrcoef(x.T)
    rho = float(np.clip(np.mean(c[~np.eye(q, dtype=bool)]), lo + 0.05 * (hi - lo), hi - 0.05))
    guess = {"mu": float(x.mean()), "sigma2": float(x.var()), "rho": rho}
    return np.array([guess[f] for f in free])


def eqcorr_estimate(x, q, free, known):
    model = pairwise_eqcorr_model(q, free, known)
    xmap = eqcorr_xi_map(q, free)
    return minimize_total_score(model, x, eqcorr_start(x, q, free, known), cmap=xmap).theta


def eqcorr_sample(x, q, free, known, prior, seed, cfg):
    target, xmap = eqcorr_target(x, q, free, known, prior)
    return _sample_in(lambda: target, xmap, free, seed, cfg)[1]


def _eqcorr_data(cfg):
    if cfg.get("data"):
        x = read_dataset(cfg.get("data")).values
        if x.shape[1] < 2:
            raise ConfigError("eqcorr data needs at least two columns", "config")
        return x
    q = cfg.get("q", 4)
    if q < 2 or cfg.get("n", 10) < 2:
        raise ConfigError("eqcorr needs q >= 2 and n >= 2", "config")
    return sample_eqcorr(substream(cfg.seed, DATA), cfg.get("n", 10), q,
                         cfg.get("mu", 0.0), cfg.get("sigma2", 0.5), cfg.get("rho", 0.1))


def eqcorr_run(command, cfg):
    if command == "reproduce":
        return eqcorr_reproduce(cfg)
    x = _eqcorr_data(cfg)
    q = x.shape[1]
    free = tuple(cfg.get("free", ("mu", "sigma2", "rho")))
    if not free or any(f not in ("mu", "sigma2", "rho") for f in free) or len(set(free)) != len(free):
        raise ConfigError(f"free must be a subset of mu,sigma2,rho, got {free}", "config")
    known = {k: cfg.get(k, d) for k, d in (("mu", 0.0), ("sigma2", 1.0), ("rho", 0.0)) if k not in free}
    theta = eqcorr_estimate(x, q, free, known)
    g = godambe_at(pairwise_eqcorr_model(q, free, known), x, theta)
    extra = {"q": q, "n": len(x), "known": known,
             "calibration_residual": float(np.max(np.abs(g.C.T @ g.K @ g.C - g.G)))}
    files, summaries = {}, {}
    prior_seed = substream(cfg.seed, PRIOR)
    reps, mc_n = cfg.get("replicates", 200), cfg.get("mc_n", 500)
    if command == "sample":
        prior = eqcorr_prior(cfg.get("prior", "reference"), q, free, prior_seed, reps, mc_n)
        target, xmap = eqcorr_target(x, q, free, known, prior, theta)
        _, chain = _sample_in(lambda: target, xmap, free, substream(cfg.seed, MCMC), cfg)
        files["chain.csv"] = chain_text(chain, free)
        summaries["sr_posterior"] = chain_summary(chain, free)
    elif command == "prior-eval":
        if "rho" not in free:
            raise ConfigError("prior-eval for eqcorr tabulates over rho; include rho in free", "config")
        nodes = eqcorr_rho_nodes(q, cfg.get("grid_points", 61))
        ld, se = eqcorr_log_det_godambe(q, nodes, free, reps, mc_n, prior_seed)
        files["prior_grid.csv"] = prior_text(tabulated_prior(nodes, 0.5 * ld, 0.5 * se, "eqcorr_reference"))
        extra["prior"] = {"section": "mu = 0, sigma2 = 1", "free": list(free)}
    return RunResult(make_bundle(command, "eqcorr", cfg, free, theta, g, summaries, extra), files)


def eqcorr_rho_only_grid(x, q, prior, points=400):
    """Calibrated grid posterior of rho with mu = 0 and sigma2 = 1 known."""
    lo, hi = eqcorr_rho_bounds(q)
    model = pairwise_eqcorr_model(q, ("rho",), {"mu": 0.0, "sigma2": 1.0})
    theta = eqcorr_estimate(x, q, ("rho",), {"mu": 0.0, "sigma2": 1.0})
    target = build_target(model, x, prior, theta_tilde=theta)
    nodes = np.linspace(lo, hi, points + 2)[1:-1]
    return target, grid_posterior_1d(target, nodes)


def _histograms(chains, bins=40):
    """Common-bin density histograms of each parameter across prior runs."""
    names = next(iter(chains.values())).param_names
    rows = []
    for j, name in enumerate(names):
        allv = np.concatenate([c.draws[:, j] for c in chains.values()])
        edges = np.linspace(*np.quantile(allv, [0.005, 0.995]), bins + 1)
        dens = {k: np.histogram(c.draws[:, j], edges, density=False)[0] / (len(c.draws) * np.diff(edges))
                for k, c in chains.items()}
        for b in range(bins):
            rows.append([name, edges[b], edges[b + 1], *(dens[k][b] for k in chains)])
    return rows


def eqcorr_reproduce(cfg):
    seed = cfg.seed
    reps, mc_n = cfg.get("replicates", 200), cfg.get("mc_n", 500)
    files, summaries = {}, {}

    grid_rows, rho_rows = [], []
    known = {"mu": 0.0, "sigma2": 1.0}
    for idx, (q, rho) in enumerate(EQCORR_RHO_ONLY):
        x = sample_eqcorr(substream(seed, DATA, idx), 10, q, 0.0, 1.0, rho)
        nodes = eqcorr_rho_nodes(q)
        ld, _ = eqcorr_log_det_godambe(q, nodes, ("rho",), reps, mc_n, substream(seed, PRIOR, q))
        priors = {"uniform": flat_prior(), "reference": eqcorr_reference_prior(q, nodes, ld, ("rho",))}
        grids = {}
        for k, pr in priors.items():
            target, grids[k] = eqcorr_rho_only_grid(x, q, pr, cfg.get("grid_points", 400))
            s = posterior_summaries(grids[k])
            rho_rows.append([q, rho, target.theta_tilde[0], k, *(s[c] for c in SUMMARY_HEADER)])
        for r, u, v in zip(grids["uniform"].nodes, grids["uniform"].values, grids["reference"].values):
            grid_rows.append([q, rho, r, u, v])
    files["rho_only_grids.csv"] = csv_text(["q", "rho_true", "rho", "uniform", "reference"], grid_rows)
    files["rho_only_summary.csv"] = csv_text(["q", "rho_true", "rho_tilde", "prior", *SUMMARY_HEADER],
                                             rho_rows)

    free = ("mu", "sigma2", "rho")
    summary_rows = []
    for sidx, (tag, (n, q, theta)) in enumerate(EQCORR_SCENARIOS.items()):
        x = sample_eqcorr(substream(seed, DATA, 100 + sidx), n, q, *theta)
        tilde = eqcorr_estimate(x, q, free, {})
        chains = {}
        for kind in EQCORR_PRIORS:
            prior = eqcorr_prior(kind, q, free, substream(seed, PRIOR, 100 + sidx), reps, mc_n)
            target, xmap = eqcorr_target(x, q, free, {}, prior, tilde)
            _, chains[kind] = _sample_in(lambda: target, xmap, free, substream(seed, MCMC, sidx), cfg)
            files[f"{tag}_{kind}_chain.csv"] = chain_text(chains[kind], free)
            s = chain_summary(chains[kind], free)
            summaries[f"{tag}_{kind}"] = s
            for j, name in enumerate(free):
                summary_rows.append([tag, kind, name, *(s[c][j] for c in SUMMARY_HEADER), s["mc_se"][j]])
        files[f"{tag}_histograms.csv"] = csv_text(["param", "bin_left", "bin_right", *EQCORR_PRIORS],
                                                  _histograms(chains))
    files["scenario_summary.csv"] = csv_text(["scenario", "prior", "param", *SUMMARY_HEADER, "mc_se"],
                                             summary_rows)
    extra = {"scenarios": {k: {"n": v[0], "q": v[1], "theta": list(v[2])} for k, v in EQCORR_SCENARIOS.items()}}
    return RunResult(make_bundle("reproduce", "eqcorr", cfg, free, None, None, summaries, extra), files)


# ---------------------------------------------------------------------------
# Tsallis linear regression
# ---------------------------------------------------------------------------


GAMMA_SWEEP = np.linspace(1.0, 2.0, 21)
SUPPORT_SD = 10.0


def regression_prior(kind, gamma, p):
    """Prior on ``(beta, log sigma)``."""
    if kind == "flat":
        return flat_prior(p + 1)
    if kind == "reference":
        return transform_prior(regression_reference_prior(gamma, p), CoordinateMap([IDENTITY] * p + [LOG_SD]),
                               label=f"regression_reference(gamma={gamma:g})")
    raise ConfigError(f"regression prior must be flat or reference, got {kind!r}", "config")


def lad_fit(y, X, iters=100):
    """Least absolute deviations by iteratively reweighted least squares."""
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    for _ in range(iters):
        w = 1.0 / np.maximum(np.abs(y - X @ beta), 1e-8)
        new = np.linalg.solve(X.T @ (w[:, None] * X), X.T @ (w * y))
        if np.max(np.abs(new - beta)) < 1e-12:
            return new
        beta = new
    return beta


def regression_estimate(data, gamma):
    """Minimum-score ``(beta, log sigma)`` from least-squares and robust starts."""
    y, X = data[:, 0], data[:, 1:]
    p = X.shape[1]
    model = linreg_score(gamma, p)
    starts = []
    for beta in (np.linalg.lstsq(X, y, rcond=None)[0], lad_fit(y, X)):
        r = y - X @ beta
        for scale in (np.sqrt(np.mean(r * r)), 1.4826 * np.median(np.abs(r - np.median(r)))):
            starts.append(np.append(beta, np.log(max(scale, 1e-8))))
    res = minimize_total_score(model, data, starts[0], starts=starts)
    return model, res.theta


def boxed_prior(prior, centre, half):
    """``prior`` restricted to the box ``centre +- half``."""
    centre, half = np.asarray(centre, dtype=float), np.asarray(half, dtype=float)

    def logpdf(theta):
        if np.any(np.abs(theta - centre) > half):
            return -np.inf
        return prior.log_density(theta)

    return closed_form_prior(logpdf, prior.dim, f"{prior.label} on box")


def regression_target(data, gamma, prior_kind, theta=None, support_sd=SUPPORT_SD, calibrate=True):
    """Calibrated regression target.

    The Tsallis score is bounded, so with a prior flat in ``beta`` the
    SR-posterior is improper; the prior is restricted to ``theta_tilde`` plus
    or minus ``support_sd`` normal-approximation sds per coordinate.
    """
    p = data.shape[1] - 1
    model, est = regression_estimate(data, gamma) if theta is None else (linreg_score(gamma, p), theta)
    prior = regression_prior(prior_kind, gamma, p)
    target = build_target(model, data, prior, theta_tilde=est, calibrate=calibrate)
    if support_sd is None:
        return target
    sd = np.sqrt(np.diag(np.linalg.inv(target_curvature(target))) / target.n)
    return build_target(model, data, boxed_prior(prior, est, support_sd * sd), theta_tilde=est,
                        calibrate=calibrate, godambe=target.godambe)


def regression_gamma_sweep(data, gammas=GAMMA_SWEEP, prior_kind="reference"):
    """Posterior modes with normal-approximation sds and 95% intervals over gamma."""
    rows = []
    for gamma in gammas:
        target = regression_target(data, float(gamma), prior_kind)
        mode = posterior_mode(target)
        sd = np.sqrt(np.diag(np.linalg.inv(target_curvature(target)) / target.n))
        for name, m, s in zip(target.model.param_names, mode, sd):
            rows.append([float(gamma), name, m, s, m - 1.959963984540054 * s, m + 1.959963984540054 * s])
    return rows


def regression_synthetic(seed, n=30, p=3, beta=(1.0, 2.0, -1.0), sigma2=1.0, eps=0.1, delta=8.0):
    X = synthetic_design(substream(seed, DATA, 0), n, p)
    s = sample_linreg_contaminated(substream(seed, DATA, 1), X, beta, sigma2, eps, delta)
    return np.column_stack([s.y, X]), s.outliers


def _regression_data(cfg):
    if cfg.get("data"):
        ds = read_dataset(cfg.get("data"))
        if ds.y is None:
            raise ConfigError("regression data needs a y column", "config")
        return np.column_stack([ds.y, ds.X]), None
    p = cfg.get("p", 3)
    beta = cfg.get("beta", (1.0, 2.0, -1.0))
    if len(beta) != p:
        raise ConfigError(f"beta has {len(beta)} entries but p = {p}", "config")
    return regression_synthetic(cfg.seed, cfg.get("n", 30), p, beta, cfg.get("sigma2", 1.0),
                                cfg.get("eps", 0.1), cfg.get("delta", 8.0))


def regression_run(command, cfg):
    if command == "reproduce":
        return regression_reproduce(cfg)
    data, outliers = _regression_data(cfg)
    gamma = cfg.get("gamma", 1.25)
    if not gamma >= 1.0:
        raise ConfigError("gamma must be >= 1", "config")
    model, theta = regression_estimate(data, gamma)
    g = godambe_at(model, data, theta)
    names = model.param_names
    p = data.shape[1] - 1
    vb, ve = tsallis_regression_variances(gamma, float(np.exp(2.0 * theta[p])))
    extra = {"gamma": gamma, "n": len(data), "ols": np.linalg.lstsq(data[:, 1:], data[:, 0], rcond=None)[0],
             "v_beta": vb, "v_e": ve, "efficiency": tsallis_regression_variances(gamma, 1.0)[0] ** -1}
    if outliers is not None:
        extra["outliers"] = outliers.tolist()
    files, summaries = {}, {}
    kind = cfg.get("prior", "reference")
    if command == "sample":
        target = regression_target(data, gamma, kind, theta, cfg.get("support_sd", SUPPORT_SD),
                                   cfg.get("calibrate", True))
        extra["support_sd"] = cfg.get("support_sd", SUPPORT_SD)
        _, chain = _sample_in(lambda: target, None, names, substream(cfg.seed, MCMC), cfg)
        files["chain.csv"] = chain_text(chain, names)
        summaries["sr_posterior"] = chain_summary(chain, names)
    elif command == "prior-eval":
        s2 = float(np.exp(2.0 * theta[p]))
        nodes = np.geomspace(s2 / 20.0, s2 * 20.0, cfg.get("grid_points", 200))
        ref = regression_reference_prior(gamma, p)
        logv = np.array([ref.log_density(np.append(np.zeros(p), v)) for v in nodes])
        files["prior_grid.csv"] = prior_text(tabulated_prior(nodes, logv, label=ref.label))
        extra["prior"] = {"coordinate": "sigma2", "beta_block": "flat"}
    return RunResult(make_bundle(command, "regression", cfg, names, theta, g, summaries, extra), files)


def regression_reproduce(cfg):
    seed = cfg.seed
    data, outliers = regression_synthetic(seed)
    p = data.shape[1] - 1
    files = {}
    flags = np.zeros(len(data), dtype=int)
    flags[outliers] = 1
    files["regression_data.csv"] = csv_text(
        ["y", *(f"x{j}" for j in range(p)), "outlier"],
        ([*row, int(f)] for row, f in zip(data, flags)))
    settings = (("tsallis_flat", 1.25, "flat"), ("tsallis_reference", 1.25, "reference"),
                ("log_flat", 1.0, "flat"))
    summaries, rows = {}, []
    names = None
    for idx, (tag, gamma, kind) in enumerate(settings):
        target = regression_target(data, gamma, kind, support_sd=cfg.get("support_sd", SUPPORT_SD))
        names = target.model.param_names
        _, chain = _sample_in(lambda: target, None, names, substream(seed, MCMC, idx), cfg)
        files[f"{tag}_chain.csv"] = chain_text(chain, names)
        s = chain_summary(chain, names)
        summaries[tag] = s
        for j, name in enumerate(names):
            rows.append([tag, name, *(s[c][j] for c in SUMMARY_HEADER), s["mc_se"][j]])
    files["regression_summary.csv"] = csv_text(["setting", "param", *SUMMARY_HEADER, "mc_se"], rows)
    files["gamma_sweep.csv"] = csv_text(["gamma", "param", "mode", "sd", "lower95", "upper95"],
                                        regression_gamma_sweep(data))
    log_mode = posterior_mode(regression_target(data, 1.0, "flat"))
    extra = {"outliers": outliers.tolist(), "log_score_flat_mode": log_mode}
    return RunResult(make_bundle("reproduce", "regression", cfg, names, None, None, summaries, extra), files)


# ---------------------------------------------------------------------------
# Custom: normal mean with known variance
# ---------------------------------------------------------------------------


def custom_model(score, sigma, gamma):
    if score == "log":
        return normal_log_score(known_sigma=sigma)
    if score == "tsallis":
        return normal_tsallis_score(gamma, known_sigma=sigma)
    if score == "hyvarinen":
        return normal_hyvarinen_score(known_sigma=sigma)
    raise ConfigError(f"score must be log, tsallis or hyvarinen, got {score!r}", "config")


def custom_prior(kind, mean, sd):
    if kind == "flat":
        return flat_prior()
    if kind == "normal":
        if not sd > 0.0:
            raise ConfigError("prior_sd must be positive", "config")
        return closed_form_prior(lambda t: -0.5 * ((t[0] - mean) / sd) ** 2, 1, "normal")
    raise ConfigError(f"custom prior must be flat or normal, got {kind!r}", "config")


def conjugate_posterior(x, sigma, prior_kind, mean=0.0, sd=1.0):
    """Exact posterior mean and sd of a normal mean under the log score."""
    n = len(x)
    if prior_kind == "flat":
        return float(np.mean(x)), float(sigma / np.sqrt(n))
    prec = 1.0 / sd ** 2 + n / sigma ** 2
    return float((mean / sd ** 2 + np.sum(x) / sigma ** 2) / prec), float(prec ** -0.5)


def custom_run(command, cfg):
    if command == "reproduce":
        raise ConfigError("reproduce supports vmf, eqcorr and regression", "config")
    sigma2 = cfg.get("sigma2", 1.0)
    if not sigma2 > 0.0:
        raise ConfigError("sigma2 must be positive", "config")
    sigma = float(np.sqrt(sigma2))
    if cfg.get("data"):
        ds = read_dataset(cfg.get("data"))
        x = ds.column("x") if "x" in ds.columns else ds.values[:, 0]
    else:
        x = np.random.default_rng(substream(cfg.seed, DATA)).normal(cfg.get("mu", 0.0), sigma, cfg.get("n", 50))
    score = cfg.get("score", "log")
    model = custom_model(score, sigma, cfg.get("gamma", 1.5))
    theta = minimize_total_score(model, x, [float(np.mean(x))]).theta
    g = godambe_at(model, x, theta)
    names = model.param_names
    kind = cfg.get("prior", "flat")
    pm, ps = cfg.get("prior_mean", 0.0), cfg.get("prior_sd", 1.0)
    prior = custom_prior(kind, pm, ps)
    extra = {"n": len(x), "score": score}
    if score == "log":
        m, s = conjugate_posterior(x, sigma, kind, pm, ps)
        extra["conjugate"] = {"mean": m, "sd": s}
    files, summaries = {}, {}
    if command == "sample":
        _, chain = _sample_in(lambda: build_target(model, x, prior, theta_tilde=theta,
                                                   calibrate=cfg.get("calibrate", True), godambe=g),
                              None, names, substream(cfg.seed, MCMC), cfg)
        files["chain.csv"] = chain_text(chain, names)
        summaries["sr_posterior"] = chain_summary(chain, names)
    elif command == "prior-eval":
        centre, half = (pm, 6.0 * ps) if kind == "normal" else (float(theta[0]), 6.0 * sigma)
        nodes = np.linspace(centre - half, centre + half, cfg.get("grid_points", 200))
        logv = np.array([prior.log_density([v]) for v in nodes])
        files["prior_grid.csv"] = prior_text(tabulated_prior(nodes, logv, label=prior.label))
    return RunResult(make_bundle(command, "custom", cfg, names, theta, g, summaries, extra), files)


RUNNERS = {"vmf": vmf_run, "eqcorr": eqcorr_run, "regression": regression_run, "custom": custom_run}


def run(command, example, cfg: ExperimentConfig):
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}", "cli")
    if example not in RUNNERS:
        raise ConfigError(f"unknown example {example!r}", "cli")
    if command == "sample":
        _mcmc_settings(cfg)
    return RUNNERS[example](command, cfg)
