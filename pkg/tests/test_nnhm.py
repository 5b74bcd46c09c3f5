import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from mapborrow.distributions import HalfNormal, simpson_grid
from mapborrow.errors import DataError, DomainError
from mapborrow.evidence import Evidence, margin_to_rr
from mapborrow.nnhm import (conditional, effective_sample_size, fit, log_integrated_likelihood,
                            map_prior, marginal_summary, parse_target, prob_below_batch,
                            tail_probability, lower_bound_above_batch)

LOG_NI = math.log(margin_to_rr(0.9, 0.12).rr_threshold)


@st.composite
def evidence_sets(draw, min_j=1, max_j=6):
    j = draw(st.integers(min_j, max_j))
    ys = draw(st.lists(st.floats(-1.5, 1.5), min_size=j, max_size=j))
    ss = draw(st.lists(st.floats(0.03, 1.0), min_size=j, max_size=j))
    return [Evidence(str(i), y, s) for i, (y, s) in enumerate(zip(ys, ss))]


def brute_force_posterior(evidence, scale, n_tau=1500, n_mu=3001):
    """Joint (tau, mu) posterior on a rectangle, no closed forms used."""
    y = np.array([e.y for e in evidence])
    s = np.array([e.s for e in evidence])
    tau = np.linspace(0, 6 * scale, n_tau)
    mu = np.linspace(y.min() - 3, y.max() + 3, n_mu)
    T, M = np.meshgrid(tau, mu, indexing="ij")
    logp = stats.halfnorm.logpdf(T, scale=scale)
    for yj, sj in zip(y, s):
        logp = logp + stats.norm.logpdf(yj, M, np.sqrt(sj**2 + T**2))
    p = np.exp(logp - logp.max())
    z = integrate.trapezoid(integrate.trapezoid(p, mu, axis=1), tau)
    return tau, mu, T, M, p / z


# --- conditional closed forms -------------------------------------------------

def test_conditional_against_spreadsheet(phase2):
    # values from a by-hand evaluation of the weights, shrinkage and
    # posterior formulas at tau = 0.34 on the three phase II studies
    cp = conditional(phase2, 0.34)
    assert cp.mu_mean == pytest.approx(0.16262660434671014, rel=1e-12)
    assert cp.mu_var == pytest.approx(0.04692575454563638, rel=1e-12)
    assert cp.pred_var == pytest.approx(0.1625257545456364, rel=1e-12)
    assert cp.pred_mean == cp.mu_mean
    np.testing.assert_allclose(cp.theta_means, [0.13390724775703022, 0.16519401659561095, 0.18877854868748914], rtol=1e-12)
    np.testing.assert_allclose(cp.theta_vars, [0.022960155077353925, 0.029833953755068338, 0.014068649523092273], rtol=1e-12)


def test_pooling_limit(phase2):
    cp = conditional(phase2, 0.0)
    np.testing.assert_array_equal(cp.shrinkage, 1.0)
    np.testing.assert_allclose(cp.theta_means, cp.mu_mean, rtol=1e-14)
    np.testing.assert_allclose(cp.theta_vars, 1 / cp.w_plus, rtol=1e-14)
    assert cp.pred_var == pytest.approx(cp.mu_var, rel=1e-14)


def test_stratification_limit(phase2):
    cp = conditional(phase2, 1e6)
    np.testing.assert_allclose(cp.theta_means, [e.y for e in phase2], rtol=1e-6)
    np.testing.assert_allclose(cp.theta_vars, [e.s**2 for e in phase2], rtol=1e-6)


def test_empty_and_invalid():
    with pytest.raises(DataError):
        conditional([], 0.1)
    with pytest.raises(DomainError):
        conditional([Evidence("a", 0.0, 0.1)], -0.1)


@given(evidence_sets(), st.floats(0, 3))
def test_variance_identity_and_reduction(ev, tau):
    cp = conditional(ev, tau)
    s2 = np.array([e.s**2 for e in ev])
    lhs = cp.shrinkage * (tau**2 + cp.shrinkage / cp.w_plus)
    rhs = s2 - s2 * cp.shrinkage * (1 - cp.weights / cp.w_plus)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12)
    np.testing.assert_allclose(cp.theta_vars, lhs, rtol=1e-12)
    if len(ev) >= 2:
        assert np.all(cp.theta_vars < s2)


@given(evidence_sets(), st.floats(0, 3))
def test_shrinkage_direction_and_predictive_variance(ev, tau):
    cp = conditional(ev, tau)
    y = np.array([e.y for e in ev])
    lo, hi = np.minimum(y, cp.mu_mean), np.maximum(y, cp.mu_mean)
    assert np.all(cp.theta_means >= lo - 1e-12) and np.all(cp.theta_means <= hi + 1e-12)
    assert np.all((cp.shrinkage > 0) & (cp.shrinkage <= 1))
    assert cp.pred_var >= cp.mu_var
    if tau > 1e-6:
        assert cp.pred_var > cp.mu_var


# --- integrated likelihood and fit ---------------------------------------------

@settings(max_examples=25)
@given(evidence_sets(min_j=2, max_j=4), st.floats(0, 1), st.floats(0, 1))
def test_integrated_likelihood_against_quadrature(ev, t1, t2):
    y = np.array([e.y for e in ev])
    s = np.array([e.s for e in ev])

    def direct(t):
        f = lambda m: np.prod(stats.norm.pdf(y, m, np.sqrt(s**2 + t**2)))
        sd = np.sqrt(s**2 + t**2).max()
        # integrand can be ~1e-12 when studies conflict; default epsabs would swamp it
        return integrate.quad(f, y.min() - 10 * sd, y.max() + 10 * sd, points=list(y), limit=200, epsabs=0)[0]

    ll = log_integrated_likelihood(y, s, np.array([t1, t2]))
    ratio = direct(t1) / direct(t2)
    assert math.exp(ll[0] - ll[1]) == pytest.approx(ratio, rel=1e-6)


def test_tau_posterior_normalised(phase2):
    post = fit(phase2, HalfNormal(0.5))
    assert post.grid.integrate(post.tau_density) == pytest.approx(1.0, abs=1e-6)
    assert post.node_mass.sum() == pytest.approx(1.0, abs=1e-12)


def test_fit_against_brute_force_grid(phase2):
    post = fit(phase2, HalfNormal(0.5))
    tau, mu, T, M, p = brute_force_posterior(phase2, 0.5)
    p_tau = integrate.trapezoid(p, mu, axis=1)
    cdf = integrate.cumulative_trapezoid(p_tau, tau, initial=0)
    assert post.tau_quantile(0.5) == pytest.approx(np.interp(0.5, cdf, tau), abs=1e-3)
    p_mu = integrate.trapezoid(p, tau, axis=0)
    p_mu_tail = integrate.trapezoid(np.where(mu >= LOG_NI, p_mu, 0), mu)
    assert tail_probability(post, "mu", LOG_NI) == pytest.approx(p_mu_tail, abs=1e-3)
    # theta_star | mu, tau ~ N(mu, tau^2)
    cond = stats.norm.sf(LOG_NI, M, np.maximum(T, 1e-12))
    p_star = integrate.trapezoid(integrate.trapezoid(p * cond, mu, axis=1), tau)
    assert tail_probability(post, "theta_star", LOG_NI) == pytest.approx(p_star, abs=1e-3)


@pytest.mark.parametrize("which, med, lo, hi", [
    ((0, 1, 2), 0.12, 0.00, 0.51),
])
def test_phase2_tau_posterior(phase2, which, med, lo, hi):
    s = marginal_summary(fit(phase2, HalfNormal(0.5)), "tau")
    assert s.quantiles[1] == pytest.approx(med, abs=0.01)
    assert s.interval[0] == pytest.approx(lo, abs=0.01)
    assert s.interval[1] == pytest.approx(hi, abs=0.01)


def test_single_study_tau_posterior_is_prior():
    hn = HalfNormal(0.5)
    post = fit([Evidence("a", 0.2, 0.15)], hn)
    ks = np.max(np.abs(post.tau_cdf_table() - hn.cdf(post.tau)))
    assert ks < 0.02


def test_single_study_theta_unshrunk():
    post = fit([Evidence("a", 0.2, 0.15)], HalfNormal(0.5))
    mix = post.marginal("theta:a")
    assert mix.mean == pytest.approx(0.2, abs=1e-12)
    assert mix.var == pytest.approx(0.15**2, rel=1e-10)


def test_standalone_final_lower_bound(bundle):
    from mapborrow.evidence import to_evidence

    post = fit([to_evidence(bundle.phase3_final)], HalfNormal(0.5))
    s = marginal_summary(post, 0, interval="central")
    assert math.exp(s.interval[0]) == pytest.approx(0.870, abs=1e-3)


def test_pooling_limit_matches_fixed_effect(phase2):
    tiny = HalfNormal(1e-9)
    post = fit(phase2, tiny)
    y = np.array([e.y for e in phase2])
    w = 1 / np.array([e.s for e in phase2]) ** 2
    fe_mean, fe_sd = (w @ y) / w.sum(), w.sum() ** -0.5
    s = marginal_summary(post, "mu", probs=(0.025, 0.5, 0.975))
    np.testing.assert_allclose(s.quantiles, stats.norm.ppf([0.025, 0.5, 0.975], fe_mean, fe_sd), atol=1e-7)


# --- summaries, tails and targets ----------------------------------------------

def test_published_tail_probabilities(phase2):
    post = fit(phase2, HalfNormal(0.5))
    assert tail_probability(post, "mu", LOG_NI) == pytest.approx(0.971, abs=0.002)
    assert tail_probability(post, "theta_star", LOG_NI) == pytest.approx(0.920, abs=0.002)
    assert tail_probability(post, "mu", -math.inf) == 1.0


@settings(max_examples=20, deadline=None)
@given(evidence_sets(min_j=2, max_j=4), st.floats(0.01, 0.99))
def test_quantile_tail_round_trip(ev, q):
    post = fit(ev, HalfNormal(0.5))
    for target in ("mu", "theta_star", "theta:0"):
        x = marginal_summary(post, target, probs=(q,)).quantiles[0]
        assert tail_probability(post, target, x) == pytest.approx(1 - q, abs=1e-6)


def test_target_parsing(phase2):
    post = fit(phase2, HalfNormal(0.5))
    assert parse_target("theta-star") == ("theta_star", None)
    assert parse_target("theta:6") == ("theta", "6")
    assert parse_target(2) == ("theta", 2)
    assert post.marginal("theta:6").mean == post.marginal(2).mean
    with pytest.raises(DomainError):
        post.marginal("theta:99")
    with pytest.raises(DomainError):
        post.marginal(7)
    with pytest.raises(DomainError):
        parse_target("sigma")


# --- MAP prior and ESS ------------------------------------------------------------

def test_ess_published(phase2, bundle):
    post = fit(phase2, HalfNormal(0.5))
    assert bundle.ess_reference == 154
    assert effective_sample_size(post, 154) == pytest.approx(14, abs=1)


def test_ess_degenerate_prior_recovers_reference(phase2):
    post = fit(phase2, HalfNormal(1e-9))
    assert effective_sample_size(post, 154) == pytest.approx(154, rel=1e-6)


def test_ess_smaller_under_wider_prior(phase2):
    narrow = effective_sample_size(fit(phase2, HalfNormal(0.5)), 154)
    wide = effective_sample_size(fit(phase2, HalfNormal(1.0)), 154)
    assert wide < narrow


def _map_vs_mac(hist, new, prior):
    mac = fit(hist + [new], prior)
    grid = mac.grid
    mapp = map_prior(fit(hist, prior, grid=grid)).update(new.y, new.s)
    probs = np.array([0.025, 0.5, 0.975])
    return mac.marginal(len(hist)).quantile(probs), mapp.quantile(probs)


def test_map_equals_mac_case_study(phase2, bundle):
    from mapborrow.evidence import to_evidence

    a, b = _map_vs_mac(phase2, to_evidence(bundle.phase3_interim), HalfNormal(0.5))
    np.testing.assert_allclose(a, b, atol=1e-4)


# --- batched path used by the simulator -------------------------------------------

def test_batched_probabilities_match_fit(phase2, rng):
    prior = HalfNormal(0.5)
    grid = simpson_grid(prior.upper_bound(), 401)
    ys = rng.normal(0.0, 0.1, 25)
    ss = rng.uniform(0.05, 0.2, 25)
    Y = np.column_stack([np.tile([e.y for e in phase2], (25, 1)), ys])
    S = np.column_stack([np.tile([e.s for e in phase2], (25, 1)), ss])
    batch = prob_below_batch(Y, S, prior, grid, 3, LOG_NI)
    for k in range(25):
        post = fit(phase2 + [Evidence("n", ys[k], ss[k])], prior)
        assert batch[k] == pytest.approx(1 - tail_probability(post, "theta:n", LOG_NI), abs=1e-6)


@pytest.mark.parametrize("kind", ["shortest", "central"])
def test_batched_interval_decision_matches_fit(phase2, rng, kind):
    prior = HalfNormal(0.5)
    grid = simpson_grid(prior.upper_bound(), 101)
    n = 40
    ys = rng.normal(0.0, 0.08, n)
    ss = rng.uniform(0.05, 0.15, n)
    Y = np.column_stack([np.tile([e.y for e in phase2], (n, 1)), ys])
    S = np.column_stack([np.tile([e.s for e in phase2], (n, 1)), ss])
    got = lower_bound_above_batch(Y, S, prior, grid, 3, LOG_NI, 0.95, kind)
    for k in range(n):
        post = fit(phase2 + [Evidence("n", ys[k], ss[k])], prior)
        lo = marginal_summary(post, "theta:n", interval=kind).interval[0]
        if abs(lo - LOG_NI) > 1e-5:
            assert got[k] == (lo > LOG_NI)
