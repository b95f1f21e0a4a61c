import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from trackdeg.core_model import check_correlation
from trackdeg.errors import ConfigError
from trackdeg.priors import (
    Hyperparams,
    HyperpriorConfig,
    corr_to_unconstrained,
    halfnormal_logpdf,
    halfnormal_sample,
    lkj_corr_marginal_logpdf,
    lkj_log_normalizer,
    lkj_logpdf,
    lkj_sample,
    lognormal_logpdf,
    lognormal_sample,
    sample_hyperparams,
    uniform_logpdf,
    unconstrained_to_corr,
)


# --- half-normal and log-normal -----------------------------------------


def test_halfnormal_values():
    assert halfnormal_logpdf(0.0, 1.0) == pytest.approx(np.log(2 / np.sqrt(2 * np.pi)), abs=1e-12)
    assert halfnormal_logpdf(0.0, 1.0) == pytest.approx(-0.22579, abs=1e-5)
    assert halfnormal_logpdf(-1.0, 1.0) == -np.inf
    x = np.array([0.1, 1.0, 3.0])
    np.testing.assert_allclose(halfnormal_logpdf(x, 2.0), stats.halfnorm(scale=2.0).logpdf(x))


def test_halfnormal_sample_mean():
    x = halfnormal_sample(2.0, seed=1, size=10_000)
    assert np.all(x >= 0)
    mean = 2 * np.sqrt(2 / np.pi)
    se = 2 * np.sqrt(1 - 2 / np.pi) / np.sqrt(x.size)
    assert abs(x.mean() - mean) < 3 * se


def test_nonpositive_scales_rejected():
    with pytest.raises(ValueError):
        halfnormal_logpdf(1.0, 0.0)
    with pytest.raises(ValueError):
        lognormal_logpdf(1.0, 0.0, -1.0)


def test_lognormal_support_and_median():
    assert lognormal_logpdf(0.0, 1.0, 1.0) == -np.inf
    assert lognormal_logpdf(-2.0, 1.0, 1.0) == -np.inf
    x = lognormal_sample(2.3, 1.0, seed=0, size=20_000)
    assert np.median(x) == pytest.approx(np.exp(2.3), rel=0.05)
    assert np.exp(2.3) == pytest.approx(9.97, abs=0.01)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 50.0), st.floats(-3.0, 3.0), st.floats(0.05, 3.0))
def test_lognormal_change_of_variables(x, m, s):
    expected = stats.norm(m, s).logpdf(np.log(x)) - np.log(x)
    assert lognormal_logpdf(x, m, s) == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("logpdf, lo, hi", [
    (lambda x: halfnormal_logpdf(x, 1.7), 0.0, np.inf),
    (lambda x: lognormal_logpdf(x, 0.4, 0.8), 0.0, np.inf),
    (lambda x: uniform_logpdf(x, 0.0, 10.0), 0.0, 10.0),
])
def test_densities_integrate_to_one(logpdf, lo, hi):
    val, _ = integrate.quad(lambda x: np.exp(logpdf(x)), lo, hi, limit=200)
    assert val == pytest.approx(1.0, abs=1e-5)


# --- LKJ density ---------------------------------------------------------


def test_lkj_d2_eta1():
    assert lkj_log_normalizer(2, 1.0) == pytest.approx(np.log(2.0))
    for r in (-0.9, 0.0, 0.4):
        assert lkj_logpdf([[1, r], [r, 1]], 1.0) == pytest.approx(np.log(0.5))


def test_lkj_eta1_constant(rng):
    vals = [lkj_logpdf(r, 1.0) for r in lkj_sample(4, 1.0, rng, size=5)]
    np.testing.assert_allclose(vals, vals[0])


@pytest.mark.parametrize("eta", [0.5, 1.0, 2.0, 5.0])
def test_lkj_d2_quadrature(eta):
    def dens(r):
        return np.exp(lkj_logpdf([[1, r], [r, 1]], eta))
    val, _ = integrate.quad(dens, -1, 1, limit=200, epsabs=1e-12)
    assert val == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("eta", [1.0, 2.0, 3.0])
def test_lkj_d3_quadrature(eta):
    # volume integral over the elliptope, independent of the closed form
    def inner(r23, r13, r12):
        det = 1 + 2 * r12 * r13 * r23 - r12 ** 2 - r13 ** 2 - r23 ** 2
        return max(det, 0.0) ** (eta - 1)

    def bounds(r13, r12):
        w = np.sqrt((1 - r12 ** 2) * (1 - r13 ** 2))
        return r12 * r13 - w, r12 * r13 + w

    val, _ = integrate.nquad(inner, [bounds, [-1, 1], [-1, 1]], opts={"epsabs": 1e-9})
    assert lkj_log_normalizer(3, eta) == pytest.approx(np.log(val), abs=1e-6)
    if eta == 1.0:
        assert val == pytest.approx(np.pi ** 2 / 2, rel=1e-6)


def test_lkj_invalid_matrix():
    with pytest.raises(Exception):
        lkj_logpdf([[1, 2], [2, 1]], 1.0)


# --- LKJ sampler ---------------------------------------------------------


def test_lkj_sample_d2_uniform():
    r = lkj_sample(2, 1.0, seed=2024, size=10_000)[:, 0, 1]
    res = stats.kstest(r, stats.uniform(-1, 2).cdf)
    assert res.pvalue > 0.01
    assert res.statistic < 0.02


@pytest.mark.parametrize("eta", [0.5, 2.0])
def test_lkj_sample_d4_marginal(eta):
    d = 4
    r = lkj_sample(d, eta, seed=11, size=10_000)
    b = eta - 1 + d / 2
    for i, j in [(0, 1), (1, 3), (2, 3)]:
        res = stats.kstest(r[:, i, j], stats.beta(b, b, loc=-1, scale=2).cdf)
        assert res.pvalue > 0.01


def test_lkj_marginal_density_integrates():
    val, _ = integrate.quad(lambda x: np.exp(lkj_corr_marginal_logpdf(x, 4, 2.0)), -1, 1)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_lkj_sample_valid(rng):
    for r in lkj_sample(4, 1.0, rng, size=500):
        check_correlation(r)


def test_lkj_large_eta_concentrates():
    r = lkj_sample(4, 50.0, seed=0, size=2000)
    off = r[:, np.triu_indices(4, 1)[0], np.triu_indices(4, 1)[1]]
    assert np.mean(np.abs(off)) < 0.15


# --- unconstrained parameterisation -------------------------------------


def _vech(r):
    i, j = np.tril_indices(r.shape[-1], -1)
    return r[..., i, j]


@pytest.mark.parametrize("d", [2, 3, 4])
def test_jacobian_finite_difference(d, rng):
    p = d * (d - 1) // 2
    y = rng.normal(0, 0.8, p)
    _, _, log_jac = unconstrained_to_corr(y)
    h = 1e-6
    jac = np.empty((p, p))
    for k in range(p):
        e = np.zeros(p)
        e[k] = h
        jac[:, k] = (_vech(unconstrained_to_corr(y + e)[0]) - _vech(unconstrained_to_corr(y - e)[0])) / (2 * h)
    assert log_jac == pytest.approx(np.log(abs(np.linalg.det(jac))), abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5))
def test_unconstrained_round_trip(seed, d):
    r = lkj_sample(d, 1.5, seed)
    y = corr_to_unconstrained(r)
    r2, chol, _ = unconstrained_to_corr(y)
    np.testing.assert_allclose(r2, r, atol=1e-10)
    np.testing.assert_allclose(chol @ chol.T, r, atol=1e-10)


# --- hyperparameters -----------------------------------------------------


def test_hyperprior_defaults():
    cfg = HyperpriorConfig()
    for seed in range(200):
        h = sample_hyperparams(cfg, seed)
        assert np.all((h.s_mu > 0) & (h.s_mu < 10))
        assert np.all((h.s_sigma > 0) & (h.s_sigma < 10))
        assert np.all((h.s_z > 0) & (h.s_z < 2))
        assert np.all(h.m_z > 0)
        assert h.eta == 1.0


def test_hyperprior_point_mass():
    cfg = HyperpriorConfig(n_indicators=2, a_mu=3.0, b_mu=3.0, a_z=0.7, b_z=0.7)
    h = sample_hyperparams(cfg, 0)
    np.testing.assert_array_equal(h.s_mu, [3.0, 3.0])
    np.testing.assert_array_equal(h.s_z, [0.7, 0.7])
    with pytest.raises(ConfigError):
        cfg.strict()


def test_hyperprior_m_z_median():
    cfg = HyperpriorConfig(n_indicators=1)
    draws = np.array([sample_hyperparams(cfg, s).m_z[0] for s in range(10_000)])
    assert np.median(draws) == pytest.approx(np.exp(2.3), rel=0.05)


def test_hyperprior_invalid():
    with pytest.raises(ConfigError):
        HyperpriorConfig(a_mu=5.0, b_mu=1.0)
    with pytest.raises(ConfigError):
        HyperpriorConfig(S_z=0.0)
    with pytest.raises(ConfigError):
        HyperpriorConfig(n_indicators=2, b_mu=[1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        Hyperparams([1.0], [1.0], [1.0], [-1.0])


def test_hyperprior_logpdf_outside_support():
    cfg = HyperpriorConfig(n_indicators=1)
    assert cfg.logpdf(Hyperparams([11.0], [1.0], [1.0], [1.0])) == -np.inf
    assert np.isfinite(cfg.logpdf(Hyperparams([1.0], [1.0], [1.0], [1.0])))
