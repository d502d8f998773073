import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from scorebayes.errors import DomainError, SingularGamma
from scorebayes.estimation import minimize_total_score
from scorebayes.models import normal_location_scale, sample_linreg_contaminated, sample_vonmises, synthetic_design
from scorebayes.numerics import bessel_ratio_A1
from scorebayes.priors import (
    ChiSqPriorInputs, MonteCarloGodambe, chi_square_prior_scalar, chisq_inputs_from_moments,
    chisq_inputs_monte_carlo, chisq_score_slope, closed_form_prior, flat_prior, godambe_reference_prior,
    read_prior_csv, regression_reference_prior, tabulate_reference_prior, tabulated_prior, transform_prior,
    tsallis_regression_variances, vmf_godambe, vmf_reference_prior, write_prior_csv,
)
from scorebayes.scoring import (
    linreg_score, location_scale_tsallis_score, normal_log_score, normal_scale_log_score,
    vonmises_kappa_hyvarinen_score,
)
from scorebayes.transforms import LOG, LOGIT, CoordinateMap, scaled_logit


# --- Godambe reference priors ---------------------------------------------------


def test_log_score_normal_mean_prior_is_constant():
    vals = [godambe_reference_prior([m], lambda t: np.array([[1.0]])) for m in (-5.0, 0.0, 3.0)]
    assert vals == [1.0, 1.0, 1.0]
    model = normal_log_score(known_sigma=1.0)
    mc = MonteCarloGodambe(model, lambda rng, size, th: th[0] + rng.standard_normal(size),
                           replicates=20, n=100, seed=1, common_random_numbers=True)
    # the log-score Hessian of a Gaussian mean is exactly one whatever the data
    assert [godambe_reference_prior([m], mc) for m in (-5.0, 0.0, 3.0)] == pytest.approx([1.0] * 3, abs=1e-12)


def test_tsallis_location_prior_is_flat_within_mc_error():
    model = location_scale_tsallis_score(normal_location_scale("location"), 1.5)
    mc = MonteCarloGodambe(model, lambda rng, size, th: th[0] + rng.standard_normal(size),
                           replicates=50, n=400, seed=3)
    (G1, se1), (G2, se2) = mc.estimate([0.0], 0), mc.estimate([7.0], 1)
    p1, p2 = np.sqrt(G1[0, 0]), np.sqrt(G2[0, 0])
    assert abs(p1 - p2) < 3.0 * np.hypot(se1, se2)


def test_tsallis_scale_prior_is_inverse_scale_within_mc_error():
    model = location_scale_tsallis_score(normal_location_scale("scale", 1.0), 1.5)
    mc = MonteCarloGodambe(model, lambda rng, size, th: th[0] * rng.standard_normal(size),
                           replicates=50, n=400, seed=4)
    scaled, errs = [], []
    for k, s in enumerate((0.5, 1.0, 2.0, 4.0)):
        G, se = mc.estimate([s], k)
        scaled.append(np.sqrt(G[0, 0]) * s)
        errs.append(se * s)
    scaled, errs = np.array(scaled), np.array(errs)
    for a in range(4):
        for b in range(a + 1, 4):
            assert abs(scaled[a] - scaled[b]) < 3.0 * np.hypot(errs[a], errs[b])


def test_tabulated_reference_prior_carries_log_errors():
    model = vonmises_kappa_hyvarinen_score()
    mc = MonteCarloGodambe(model, lambda rng, size, th: sample_vonmises(rng, size, 0.0, th[0]),
                           replicates=20, n=200, seed=5)
    prior = tabulate_reference_prior(np.linspace(0.5, 4.0, 8), mc)
    assert prior.kind == "tabulated"
    assert np.all(prior.table["mc_stderr"] > 0)
    assert np.trapezoid(np.exp(prior.table["log_prior"]), prior.table["theta"]) == pytest.approx(1.0)


# --- von Mises ------------------------------------------------------------------


def test_vmf_prior_small_kappa_limit():
    assert vmf_reference_prior(1e-4) == pytest.approx(2 ** -0.5, abs=1e-3)


def test_vmf_prior_matches_sandwich_variance():
    k = 3.0
    a1 = bessel_ratio_A1(k)
    V = k * (2 * k - 3 * a1) / a1 ** 2
    assert vmf_reference_prior(k) == pytest.approx(np.sqrt(1.0 / V), rel=1e-12)
    assert vmf_godambe(k) == pytest.approx(1.0 / V, rel=1e-12)


def test_vmf_prior_matches_monte_carlo_godambe():
    model = vonmises_kappa_hyvarinen_score()
    mc = MonteCarloGodambe(model, lambda rng, size, th: sample_vonmises(rng, size, 0.0, th[0]),
                           replicates=100, n=1000, seed=11)
    G, se = mc.estimate([2.0])
    assert abs(np.sqrt(G[0, 0]) - vmf_reference_prior(2.0)) < 3.0 * se


def test_vmf_prior_domain():
    for k in (0.0, -1.0):
        with pytest.raises(DomainError):
            vmf_reference_prior(k)


def test_vmf_prior_bounded_and_tail_behaviour():
    k = np.geomspace(1e-8, 1e3, 400)
    p = vmf_reference_prior(k)
    assert np.all(np.isfinite(p)) and np.all(p > 0) and p.max() <= 2 ** -0.5 + 1e-12
    assert k[0] * p[0] < 1e-7
    # large kappa: A1 -> 1 so the prior decays like (2 kappa^2)^{-1/2}
    assert p[-1] * k[-1] * np.sqrt(2.0) == pytest.approx(1.0, rel=2e-3)


# --- Tsallis regression ------------------------------------------------------------


def test_regression_variances_at_log_score():
    vb, ve = tsallis_regression_variances(1.0, 2.0)
    assert vb == 2.0
    assert ve == pytest.approx(2.0 * 2.0 ** 2, rel=1e-14)


def test_regression_efficiency_at_1_25():
    vb, _ = tsallis_regression_variances(1.25, 1.0)
    assert 0.93 <= 1.0 / vb <= 0.95


def test_regression_variances_continuous_at_one():
    a, b = tsallis_regression_variances(1.0, 1.3), tsallis_regression_variances(1.0 + 1e-7, 1.3)
    assert np.allclose(a, b, rtol=1e-10)


def test_regression_variances_domain():
    with pytest.raises(DomainError):
        tsallis_regression_variances(0.9, 1.0)
    with pytest.raises(DomainError):
        tsallis_regression_variances(1.2, 0.0)


@pytest.mark.slow
def test_regression_variances_by_simulation():
    gamma, n, reps, p = 1.5, 500, 2000, 3
    beta = np.array([1.0, 2.0, -1.0])
    X = synthetic_design(0, n, p)
    model = linreg_score(gamma, p)
    b_hat, s2_hat = [], []
    for r in range(reps):
        y = sample_linreg_contaminated(1000 + r, X, beta, 1.0).y
        start = np.append(np.linalg.lstsq(X, y, rcond=None)[0], 0.0)
        res = minimize_total_score(model, np.column_stack([y, X]), start, starts=[start])
        b_hat.append(res.theta[:p])
        s2_hat.append(np.exp(2.0 * res.theta[p]))
    vb, ve = tsallis_regression_variances(gamma, 1.0)
    # (X^T X)^{1/2} (beta_hat - beta) has covariance v_beta I
    L = np.linalg.cholesky(X.T @ X)
    z = (np.array(b_hat) - beta) @ L
    assert np.diag(np.cov(z.T)) == pytest.approx([vb] * p, rel=0.1)
    assert n * np.var(s2_hat, ddof=1) == pytest.approx(ve, rel=0.1)


def test_regression_prior_at_log_score_pattern():
    p = 3
    prior = regression_reference_prior(1.0, p)
    lp = [prior([0, 0, 0, s2]) for s2 in (0.5, 1.0, 4.0)]
    # (s2^p * 2 s2^2)^{-1/2}: slope -(p + 2) / 2 in log s2
    slopes = np.diff(lp) / np.diff(np.log([0.5, 1.0, 4.0]))
    assert slopes == pytest.approx([-(p + 2) / 2.0] * 2, rel=1e-12)


def test_regression_prior_flat_in_beta_and_finite():
    prior = regression_reference_prior(1.25, 2)
    assert prior([1.0, -3.0, 2.0]) == prior([100.0, 5.0, 2.0])
    for s2 in np.geomspace(1e-6, 1e6, 25):
        assert np.isfinite(prior([0.0, 0.0, s2]))
    with pytest.raises(DomainError):
        prior([0.0, 0.0, -1.0])


# --- change of variables ----------------------------------------------------------


def test_transform_identity_map_leaves_prior_unchanged():
    base = closed_form_prior(lambda t: -0.5 * t[0] ** 2)
    out = transform_prior(base, CoordinateMap.identity(1))
    for t in np.linspace(-3, 3, 13):
        assert out([t]) == base([t])


def test_transform_log_kappa_matches_recomputed_reference():
    base = closed_form_prior(lambda t: np.log(vmf_reference_prior(t[0])))
    out = transform_prior(base, CoordinateMap([LOG]))
    psi = np.linspace(-5.0, 4.0, 100)
    # G(psi) = G(kappa) (d kappa / d psi)^2 with kappa = exp(psi)
    direct = 0.5 * np.log(vmf_godambe(np.exp(psi)) * np.exp(2 * psi))
    got = np.array([out([u]) for u in psi])
    assert np.max(np.abs(got - direct)) < 1e-6


def test_transform_uniform_under_logit_is_logistic():
    out = transform_prior(flat_prior(), CoordinateMap([LOGIT]))
    psi = np.linspace(-8.0, 8.0, 100)
    got = np.array([out([u]) for u in psi])
    assert np.allclose(got, stats.logistic.logpdf(psi), atol=1e-12)


def test_transform_with_explicit_jacobian_matches_cmap():
    base = closed_form_prior(lambda t: np.log(vmf_reference_prior(t[0])))
    a = transform_prior(base, CoordinateMap([LOG]))
    b = transform_prior(base, to_model=np.exp, jacobian=lambda u: np.exp(u))
    for u in np.linspace(-2, 2, 9):
        assert a([u]) == pytest.approx(b([u]), abs=1e-12)


@given(st.floats(-0.9, 0.9), st.floats(0.2, 2.0))
def test_reference_prior_is_invariant_under_reparametrization(shift, scale):
    # reference prior of a Fisher metric 1/(t(1-t)) on (0, 1), recomputed in psi
    # coordinates through the pullback, equals the transformed prior
    cmap = CoordinateMap([scaled_logit(0.0, 1.0)])
    info = lambda t: 1.0 / (t * (1.0 - t))
    base = closed_form_prior(lambda t: 0.5 * np.log(info(t[0])))
    out = transform_prior(base, cmap)
    psi = shift + scale * np.linspace(-4, 4, 100)
    t = LOGIT.to_model(psi)
    dt = np.exp(LOGIT.log_abs_deriv(psi))
    direct = 0.5 * np.log(info(t) * dt * dt)
    got = np.array([out([u]) for u in psi])
    assert np.max(np.abs(got - direct)) < 1e-6


# --- scalar chi-square prior ---------------------------------------------------------


def _variational_slope(nodes, g, i, sig, a_S, a_L, h=1e-5):
    """Maximizer over grid values y = d log pi / d theta of the discretized functional

    T[y] = int sqrt(g) [w y' + A y^2 + b y] d theta,
    w = -3/g + 4/i - 4 sig, A = -1/g + 4/i - 4 sig,
    b = 3 a_S / g + 2 a_L / i + (g'/g) u + 2 u', u = 1/g + 2/i - 4 sig.

    The functional is quadratic in the grid values, so its stationary point
    solves a diagonal system; boundary rows of the difference operator are
    left out of the comparison.
    """
    d = lambda f: (f(nodes + h) - f(nodes - h)) / (2 * h)
    u = lambda t: 1 / g(t) + 2 / i(t) - 4 * sig(t)
    t = nodes
    rg = np.sqrt(g(t))
    w = rg * (-3 / g(t) + 4 / i(t) - 4 * sig(t))
    A = rg * (-1 / g(t) + 4 / i(t) - 4 * sig(t))
    b = rg * (3 * a_S(t) / g(t) + 2 * a_L(t) / i(t) + d(lambda s: np.log(g(s))) * u(t) + 2 * d(u))
    wts = np.gradient(t)  # trapezoid-like weights on a uniform grid
    D = np.gradient(np.eye(t.size), t, axis=0)
    assert np.all(A < 0), "functional must be concave in y"
    return -(D.T @ (wts * w) + wts * b) / (2 * wts * A)


def _as_inputs(g, i, sig, a_S, a_L):
    return ChiSqPriorInputs(g=g, i=i, sigma=sig, a_S=a_S, a_L=a_L)


def test_chisq_slope_maximizes_functional_log_score_scale():
    # N(0, theta^2) with the log score: g = i = 2/theta^2, sigma = 1/i,
    # E l''' = 10/theta^3 so a_L = 5/theta and a_S = -a_L
    g = lambda t: 2.0 / t ** 2
    sig = lambda t: t ** 2 / 2.0
    a_L = lambda t: 5.0 / t
    a_S = lambda t: -5.0 / t
    nodes = np.linspace(0.5, 2.0, 301)
    oracle = _variational_slope(nodes, g, g, sig, a_S, a_L)
    got = chisq_score_slope(nodes, _as_inputs(g, g, sig, a_S, a_L))
    inner = slice(2, -2)
    assert np.max(np.abs(got[inner] - oracle[inner])) < 1e-3
    assert np.max(np.abs(got + 2.0 / nodes)) < 1e-3


def test_chisq_slope_maximizes_functional_general_inputs():
    g = lambda t: 1.0 + 0.3 * np.sin(t)
    i = lambda t: 1.5 + 0.2 * t * t
    sig = lambda t: 0.8 + 0.05 * np.cos(2 * t)
    a_S = lambda t: 0.4 * t
    a_L = lambda t: -0.3 + 0.1 * np.exp(-t * t)
    nodes = np.linspace(-1.5, 1.5, 401)
    oracle = _variational_slope(nodes, g, i, sig, a_S, a_L)
    got = chisq_score_slope(nodes, _as_inputs(g, i, sig, a_S, a_L))
    inner = slice(2, -2)
    assert np.max(np.abs(got[inner] - oracle[inner])) < 1e-3


def test_chisq_constant_inputs_give_flat_prior():
    nodes = np.linspace(-2, 2, 41)
    prior = chi_square_prior_scalar(nodes, _as_inputs(1.0, 2.0, 0.3, 0.0, 0.0))
    assert np.ptp(prior.table["log_prior"]) < 1e-12


def test_chisq_singular_gamma():
    # 1/g - 4/i + 4 sigma = 1 - 1 + 0 = 0
    with pytest.raises(SingularGamma):
        chisq_score_slope(np.linspace(0, 1, 5), _as_inputs(1.0, 4.0, 0.0, 0.0, 0.0))


def test_chisq_inputs_from_moments_log_score():
    inp = chisq_inputs_from_moments(K=2.0, J=2.0, i=2.0, sigma=0.5, B_S=-10.0, B_L=10.0)
    assert (inp.g, inp.a_S, inp.a_L) == pytest.approx((2.0, -5.0, 5.0))


@pytest.mark.slow
def test_chisq_monte_carlo_band_and_log_score_answer():
    model = normal_scale_log_score()
    nodes = np.linspace(0.6, 1.6, 11)
    inputs, batches = chisq_inputs_monte_carlo(
        nodes, model, model, lambda rng, size, t: t * rng.standard_normal(size),
        n=20, replicates=10_000, seed=2, batches=20)
    prior = chi_square_prior_scalar(nodes, inputs, batches)
    se = prior.table["mc_stderr"]
    central = slice(2, -2)
    # full width of the 95% band
    assert np.max(2 * 1.96 * se[central]) < 0.1
    # the exact log-score answer is pi proportional to theta^-2; the margin
    # covers the slope's finite differences on the coarse grid
    exact = -2.0 * np.log(nodes)
    lp = prior.table["log_prior"]
    diff = (lp - lp[5]) - (exact - exact[5])
    assert np.all(np.abs(diff[central]) < 3 * se[central] + 0.01)


def test_chisq_replicate_sigma_agrees_with_plugin():
    model = normal_scale_log_score()
    mle = lambda r: np.sqrt(np.mean(r[:, 0] ** 2))
    nodes = np.array([0.8, 1.0, 1.2])
    draw = lambda rng, size, t: t * rng.standard_normal(size)
    plug, _ = chisq_inputs_monte_carlo(nodes, model, model, draw, n=50, replicates=2000, seed=1)
    reps, _ = chisq_inputs_monte_carlo(nodes, model, model, draw, mle, mle, n=50, replicates=2000,
                                       seed=1, sigma_method="replicates")
    # both estimate n Var(mle) -> 1/i = theta^2 / 2
    assert plug.sigma == pytest.approx(nodes ** 2 / 2, rel=0.02)
    assert reps.sigma == pytest.approx(nodes ** 2 / 2, rel=0.1)
    with pytest.raises(ValueError):
        chisq_inputs_monte_carlo(nodes, model, model, draw, sigma_method="replicates")


# --- tabulated priors and CSV -----------------------------------------------------------


def test_tabulated_prior_normalized_and_bounded():
    nodes = np.linspace(0.0, 2.0, 21)
    prior = tabulated_prior(nodes, -nodes)
    assert np.trapezoid(np.exp(prior.table["log_prior"]), nodes) == pytest.approx(1.0, rel=1e-12)
    assert prior([1.0]) - prior([0.0]) == pytest.approx(-1.0)
    with pytest.raises(DomainError):
        prior([2.5])
    with pytest.raises(ValueError):
        tabulated_prior([0.0, 1.0], [0.0, 0.0])


def test_prior_csv_round_trip(tmp_path):
    nodes = np.linspace(0.1, 3.0, 17)
    prior = tabulated_prior(nodes, np.log(vmf_reference_prior(nodes)), np.full(17, 0.01))
    path = tmp_path / "prior.csv"
    write_prior_csv(path, prior)
    assert path.read_text().splitlines()[0] == "theta,log_prior,mc_stderr"
    back = read_prior_csv(path)
    for key in ("theta", "log_prior", "mc_stderr"):
        assert np.array_equal(back.table[key], prior.table[key])
