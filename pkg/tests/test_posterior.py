import numpy as np
import pytest
from scipy import stats

from scorebayes.errors import DomainError, NotPositiveDefinite, UnsupportedOrder, ZeroAcceptance, ZeroMass
from scorebayes.estimation import vonmises_kappa_estimate
from scorebayes.models import sample_vonmises
from scorebayes.numerics import Grid1D
from scorebayes.posterior import (
    Chain, ExpansionDensity, batch_means_se, build_target, expansion_density, expansion_inputs,
    grid_posterior_1d, log_sr_posterior, merge_chains, mh_sample, mh_sample_chains, normal_approx,
    posterior_mode, posterior_summaries, read_grid_csv, target_curvature, write_chain_csv, write_grid_csv,
)
from scorebayes.priors import closed_form_prior, flat_prior, vmf_reference_prior, vmf_sandwich_variance
from scorebayes.scoring import normal_log_score, normal_tsallis_score, vonmises_kappa_hyvarinen_score
from scorebayes.transforms import LOG, CoordinateMap


def _normal_prior(m0, s0):
    return closed_form_prior(lambda t: -0.5 * ((t[0] - m0) / s0) ** 2)


def _conjugate(x, m0, s0):
    prec = 1.0 / s0 ** 2 + len(x)
    return (m0 / s0 ** 2 + np.sum(x)) / prec, prec ** -0.5


@pytest.fixture(scope="module")
def conjugate_case():
    x = np.random.default_rng(3).normal(0.7, 1.0, 20)
    m0, s0 = 0.0, 2.0
    target = build_target(normal_log_score(known_sigma=1.0), x, _normal_prior(m0, s0), theta_init=[x.mean()])
    return x, target, _conjugate(x, m0, s0)


@pytest.fixture(scope="module")
def vmf_target():
    x = sample_vonmises(5, 50, 0.0, 3.0)
    prior = closed_form_prior(lambda t: np.log(vmf_reference_prior(t[0])))
    kt = vonmises_kappa_estimate(x)
    return build_target(vonmises_kappa_hyvarinen_score(), x, prior, theta_tilde=[kt], cmap=CoordinateMap([LOG]))


# --- log_sr_posterior ----------------------------------------------------------------


def test_log_score_posterior_is_classical_posterior(conjugate_case):
    x, target, (m, s) = conjugate_case
    assert np.allclose(target.C, np.eye(1), atol=1e-12)
    grid = np.linspace(m - 8 * s, m + 8 * s, 200)
    diff = np.array([log_sr_posterior(target, [t]) for t in grid]) - stats.norm.logpdf(grid, m, s)
    assert np.ptp(diff) < 1e-8


def test_calibration_has_no_effect_at_theta_tilde():
    x = np.random.default_rng(1).standard_normal(40) * 1.5
    model = normal_tsallis_score(1.5, known_sigma=1.0)
    cal = build_target(model, x, flat_prior(), theta_init=[x.mean()])
    unc = build_target(model, x, flat_prior(), theta_tilde=cal.theta_tilde, calibrate=False)
    assert abs(cal.C[0, 0] - 1.0) > 1e-3
    assert np.array_equal(unc.C, np.eye(1))
    assert cal.log_target(cal.theta_tilde) == unc.log_target(cal.theta_tilde)
    t = cal.theta_tilde + 0.3
    assert cal.log_target(t) != unc.log_target(t)


def test_flat_prior_mode_is_theta_tilde():
    x = np.random.default_rng(2).standard_normal(40)
    target = build_target(normal_tsallis_score(1.5, known_sigma=1.0), x, flat_prior(), theta_init=[x.mean()])
    assert posterior_mode(target)[0] == pytest.approx(target.theta_tilde[0], abs=1e-6)


def test_target_requires_finite_value_at_theta_tilde():
    x = np.ones(5)
    prior = closed_form_prior(lambda t: -np.inf)
    with pytest.raises(DomainError):
        build_target(normal_log_score(known_sigma=1.0), x, prior, theta_tilde=[1.0])
    with pytest.raises(ValueError):
        build_target(normal_log_score(known_sigma=1.0), x, flat_prior())


# --- mh_sample ---------------------------------------------------------------------------


def _second_moment_se(draws, mean):
    return batch_means_se((draws - mean) ** 2)[0]


def test_mh_matches_gaussian_target():
    x = np.random.default_rng(4).normal(1.0, 1.0, 25)
    target = build_target(normal_log_score(known_sigma=1.0), x, flat_prior(), theta_init=[x.mean()])
    chain = mh_sample(target, T=100_000, burn_in=2000, seed=9)
    m, s = x.mean(), 1.0 / 5.0
    d = chain.draws[:, 0]
    assert abs(d.mean() - m) < 3 * batch_means_se(d)[0]
    assert abs(np.mean((d - m) ** 2) - s * s) < 3 * _second_moment_se(d, m)


def test_mh_is_reproducible(conjugate_case):
    _, target, _ = conjugate_case
    a = mh_sample(target, T=2000, burn_in=500, seed=42)
    b = mh_sample(target, T=2000, burn_in=500, seed=42)
    assert np.array_equal(a.draws, b.draws) and np.array_equal(a.log_target, b.log_target)
    assert a.acceptance_rate == b.acceptance_rate
    c = mh_sample(target, T=2000, burn_in=500, seed=43)
    assert not np.array_equal(a.draws, c.draws)


def test_mh_chain_shape_and_thinning(conjugate_case):
    _, target, _ = conjugate_case
    chain = mh_sample(target, T=1500, burn_in=100, seed=1, thin=3)
    assert chain.draws.shape == (1500, 1) and chain.log_target.shape == (1500,)
    assert 0.0 <= chain.acceptance_rate <= 1.0
    assert (chain.burn_in, chain.thin, chain.seed) == (100, 3, 1)


def test_mh_log_target_column_matches_target(vmf_target):
    chain = mh_sample(vmf_target, T=1000, burn_in=200, seed=0)
    for k in (0, 500, 999):
        assert chain.log_target[k] == pytest.approx(vmf_target.log_target(chain.draws[k]), abs=1e-10)


def test_mh_vmf_acceptance_envelope(vmf_target):
    chain = mh_sample(vmf_target, T=10_000, burn_in=2000, seed=3)
    assert 0.15 <= chain.acceptance_rate <= 0.6
    assert np.all(chain.draws > 0)


def test_mh_argument_checks(conjugate_case):
    _, target, _ = conjugate_case
    with pytest.raises(ValueError):
        mh_sample(target, T=999)
    with pytest.raises(ValueError):
        mh_sample(target, T=1000, thin=0)


def test_mh_zero_acceptance(conjugate_case):
    _, target, _ = conjugate_case
    with pytest.raises(ZeroAcceptance):
        mh_sample(target, T=1000, burn_in=0, seed=0, proposal_cov=[[1e14]], adapt=False)


def test_parallel_chains_are_ordered_by_seed(conjugate_case):
    _, target, _ = conjugate_case
    seeds = [5, 1, 3]
    chains = mh_sample_chains(target, seeds, workers=3, T=1000, burn_in=100)
    for s, c in zip(seeds, chains):
        assert np.array_equal(c.draws, mh_sample(target, T=1000, burn_in=100, seed=s).draws)
    merged = merge_chains(chains)
    assert np.array_equal(merged.draws, np.concatenate([c.draws for c in chains]))
    assert merged.acceptance_rate == pytest.approx(np.mean([c.acceptance_rate for c in chains]))


# --- grids -----------------------------------------------------------------------------


def test_grid_conjugate_sup_norm(conjugate_case):
    _, target, (m, s) = conjugate_case
    nodes = np.linspace(m - 8 * s, m + 8 * s, 2001)
    grid = grid_posterior_1d(target, nodes)
    assert np.max(np.abs(grid.values - stats.norm.pdf(nodes, m, s))) < 1e-6


def _tv_grid_vs_chain(grid, draws, bins=100):
    edges = np.linspace(grid.nodes[0], grid.nodes[-1], bins + 1)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (grid.values[1:] + grid.values[:-1]) * np.diff(grid.nodes))])
    p = np.diff(np.interp(edges, grid.nodes, cdf / cdf[-1]))
    q = np.histogram(draws, edges)[0] / len(draws)
    return 0.5 * np.sum(np.abs(p - q))


def test_grid_agrees_with_mh_conjugate(conjugate_case):
    _, target, (m, s) = conjugate_case
    grid = grid_posterior_1d(target, np.linspace(m - 5 * s, m + 5 * s, 2001))
    chain = mh_sample(target, T=200_000, burn_in=2000, seed=11)
    assert _tv_grid_vs_chain(grid, chain.draws[:, 0]) < 0.02


def test_grid_agrees_with_mh_vmf(vmf_target):
    kt = vmf_target.theta_tilde[0]
    sd = np.sqrt(vmf_sandwich_variance(kt) / vmf_target.n)
    grid = grid_posterior_1d(vmf_target, np.linspace(max(kt - 6 * sd, 1e-3), kt + 7 * sd, 2001))
    chain = mh_sample(vmf_target, T=200_000, burn_in=2000, seed=12)
    assert _tv_grid_vs_chain(grid, chain.draws[:, 0]) < 0.02


def test_grid_symmetric_target_centre():
    x = np.array([-1.0, 1.0, -0.5, 0.5])
    target = build_target(normal_log_score(known_sigma=1.0), x, flat_prior(), theta_tilde=[0.0])
    nodes = np.linspace(-4, 4, 401)
    summ = posterior_summaries(grid_posterior_1d(target, nodes))
    assert abs(summ["mean"]) < 1e-12 and abs(summ["mode"]) <= nodes[1] - nodes[0]
    assert summ["lower95"] == pytest.approx(-summ["upper95"], abs=1e-12)


def test_grid_zero_mass():
    prior = closed_form_prior(lambda t: 0.0 if t[0] < 1.0 else -np.inf)
    target = build_target(normal_log_score(known_sigma=1.0), np.zeros(3), prior, theta_tilde=[0.0])
    with pytest.raises(ZeroMass):
        grid_posterior_1d(target, np.linspace(2, 3, 11))


def test_grid_csv_round_trip(tmp_path, conjugate_case):
    _, target, (m, s) = conjugate_case
    grid = grid_posterior_1d(target, np.linspace(m - 5 * s, m + 5 * s, 51))
    path = tmp_path / "grid.csv"
    write_grid_csv(path, grid)
    assert path.read_text().splitlines()[0] == "theta,density"
    back = read_grid_csv(path)
    assert np.array_equal(back.nodes, grid.nodes) and np.array_equal(back.values, grid.values)


def test_chain_csv_columns(tmp_path, conjugate_case):
    _, target, _ = conjugate_case
    chain = mh_sample(target, T=1000, burn_in=0, seed=0)
    path = tmp_path / "chain.csv"
    write_chain_csv(path, chain)
    lines = path.read_text().splitlines()
    assert lines[0] == "draw,mu,log_target" and len(lines) == 1001
    arr = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(arr[:, 0], np.arange(1000))
    assert np.array_equal(arr[:, 1], chain.draws[:, 0]) and np.array_equal(arr[:, 2], chain.log_target)


# --- normal approximation ------------------------------------------------------------


def test_normal_approx_integrates_to_one():
    na = normal_approx([1.0], [[2.0]], 30)
    t = np.linspace(1 - 2, 1 + 2, 20001)
    assert np.trapezoid(na.pdf(t), t) == pytest.approx(1.0, abs=1e-6)
    assert na.sd[0] == pytest.approx(1.0 / np.sqrt(60.0))


def test_normal_approx_multivariate_matches_scipy():
    H = np.array([[2.0, 0.3], [0.3, 1.0]])
    na = normal_approx([0.5, -1.0], H, 10)
    pts = np.array([[0.5, -1.0], [0.7, -0.8], [0.0, 0.0]])
    ref = stats.multivariate_normal([0.5, -1.0], np.linalg.inv(H) / 10).logpdf(pts)
    assert np.allclose(na.logpdf(pts), ref, atol=1e-12)


def test_normal_approx_not_pd():
    with pytest.raises(NotPositiveDefinite):
        normal_approx([0.0], [[-1.0]], 10)


def test_normal_approx_log_score_is_laplace(conjugate_case):
    x, target, _ = conjugate_case
    na = normal_approx(target.theta_tilde, target_curvature(target), target.n)
    # observed information of a unit-variance normal mean is n
    assert na.sd[0] == pytest.approx(1.0 / np.sqrt(len(x)), rel=1e-6)


def test_normal_approx_vmf_sd_is_sandwich():
    x = sample_vonmises(8, 500, 0.0, 3.0)
    kt = vonmises_kappa_estimate(x)
    target = build_target(vonmises_kappa_hyvarinen_score(), x, flat_prior(), theta_tilde=[kt])
    na = normal_approx(target.theta_tilde, target_curvature(target), target.n)
    assert na.sd[0] == pytest.approx(np.sqrt(vmf_sandwich_variance(kt) / 500), rel=0.15)


# --- expansion --------------------------------------------------------------------------


def test_expansion_vanishing_terms_equals_normal():
    ed1 = ExpansionDensity([0.0], [[1.5]], [[1.0]], 40, [0.0], [[0.0]], [[[0.0]]], order=1)
    ed0 = ExpansionDensity([0.0], [[1.5]], [[1.0]], 40, [0.0], [[0.0]], [[[0.0]]], order=0)
    w = np.linspace(-5, 5, 101)
    assert np.all(ed1.A1(w) == 0.0)
    assert np.array_equal(ed1.density(w), ed0.density(w))
    assert np.allclose(ed0.density(w), stats.norm.pdf(w, 0, 1 / np.sqrt(1.5)), atol=1e-15)


def test_expansion_order_one_mass(vmf_target):
    ed = expansion_inputs(vmf_target, order=1)
    sd = 1.0 / np.sqrt(ed.H[0, 0])
    g = expansion_density(ed, np.linspace(-8 * sd, 8 * sd, 4001))
    assert abs(np.trapezoid(g.values, g.nodes) - 1.0) < 5.0 / vmf_target.n
    assert np.any(ed.A1(g.nodes) != 0.0)


def test_expansion_order_zero_mass():
    ed = ExpansionDensity([1.0], [[0.7]], [[1.0]], 10, [0.3], [[0.0]], [[[2.0]]], order=0)
    sd = 1.0 / np.sqrt(0.7)
    g = expansion_density(ed, np.linspace(-8 * sd, 8 * sd, 4001))
    assert abs(np.trapezoid(g.values, g.nodes) - 1.0) < 1e-3


def _conjugate_expansion_error(n, order, seed=0):
    x = np.random.default_rng(seed).normal(0.5, 1.0, n)
    m0, s0 = 0.0, 1.0
    target = build_target(normal_log_score(known_sigma=1.0), x, _normal_prior(m0, s0), theta_init=[x.mean()])
    ed = expansion_inputs(target, order=order)
    m, s = _conjugate(x, m0, s0)
    w = np.linspace(-6, 6, 1201)
    exact = stats.norm.pdf(w, np.sqrt(n) * (m - target.theta_tilde[0]), np.sqrt(n) * s)
    return np.max(np.abs(expansion_density(ed, w).values - exact))


def test_expansion_order_two_error_rate():
    e20, e200 = _conjugate_expansion_error(20, 2), _conjugate_expansion_error(200, 2)
    assert e200 * 5 <= e20


def test_expansion_order_two_beats_order_zero():
    assert _conjugate_expansion_error(50, 2) < _conjugate_expansion_error(50, 0)


def test_expansion_order_checks():
    args = ([0.0, 0.0], np.eye(2), np.eye(2), 10, [0.0, 0.0], np.zeros((2, 2)), np.zeros((2, 2, 2)))
    with pytest.raises(UnsupportedOrder):
        ExpansionDensity(*args, order=2)
    with pytest.raises(UnsupportedOrder):
        ExpansionDensity([0.0], [[1.0]], [[1.0]], 10, [0.0], [[0.0]], [[[0.0]]], order=3)
    with pytest.raises(ValueError):
        ExpansionDensity([0.0], [[1.0]], [[1.0]], 10, [0.0], [[0.0]], [[[0.0]]], order=2)


def test_expansion_multivariate_order_one_mass():
    # bivariate: odd third-order terms integrate to zero under the normal
    S3 = np.zeros((2, 2, 2))
    S3[0, 0, 0], S3[0, 1, 1], S3[1, 0, 1], S3[1, 1, 0] = 3.0, 1.0, 1.0, 1.0
    ed = ExpansionDensity([0.0, 0.0], np.eye(2), np.eye(2), 30, [0.2, -0.1], np.zeros((2, 2)), S3, order=1)
    u = np.linspace(-8, 8, 321)
    W = np.array(np.meshgrid(u, u, indexing="ij")).reshape(2, -1).T
    mass = np.trapezoid(np.trapezoid(expansion_density(ed, W).reshape(321, 321), u), u)
    assert mass == pytest.approx(1.0, abs=1e-6)


# --- summaries --------------------------------------------------------------------------


def test_summaries_grid_gaussian():
    nodes = np.linspace(-8, 8, 4001)
    summ = posterior_summaries(Grid1D(nodes, stats.norm.pdf(nodes, 1.0, 1.0)))
    assert summ["mean"] == pytest.approx(1.0, abs=1e-3) and summ["sd"] == pytest.approx(1.0, abs=1e-3)
    assert summ["mode"] == pytest.approx(1.0, abs=nodes[1] - nodes[0])
    assert summ["lower95"] == pytest.approx(1.0 - 1.959964, abs=1e-3)
    assert summ["upper95"] == pytest.approx(1.0 + 1.959964, abs=1e-3)


def test_summaries_chain_gaussian_and_deterministic():
    d = np.random.default_rng(0).normal(2.0, 0.5, (20_000, 1))
    chain = Chain(d, -0.5 * ((d[:, 0] - 2.0) / 0.5) ** 2, 0.3, 0, 1, 0)
    s1, s2 = posterior_summaries(chain), posterior_summaries(chain)
    assert s1 == s2
    se = _second_moment_se(d[:, 0], 2.0) / (2 * 0.5)
    assert abs(s1["sd"][0] - 0.5) < 3 * se
    assert s1["mode"][0] == d[np.argmax(chain.log_target), 0]


def test_summaries_bad_inputs():
    with pytest.raises(TypeError):
        posterior_summaries([1.0, 2.0])
    with pytest.raises(ValueError):
        posterior_summaries(Chain(np.empty((0, 1)), np.empty(0), 0.0, 0, 1, 0))
