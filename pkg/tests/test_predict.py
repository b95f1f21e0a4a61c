import numpy as np
import pytest
from scipy import stats

from trackdeg.core_model import SegmentSeries, WienerParams, simulate_path
from trackdeg.errors import ConvergenceError, DataError
from trackdeg.mcmc import PosteriorSamples
from trackdeg.predict import (
    Thresholds,
    compare_models,
    crps_ensemble,
    hitting_time,
    predictive_bands,
    predictive_draws,
    validate,
)
from trackdeg.priors import Hyperparams

from conftest import random_params


def point(drift, sd, corr=None, segment_id=0, **kw):
    drift = np.atleast_1d(np.asarray(drift, float))
    sd = np.broadcast_to(np.asarray(sd, float), drift.shape).copy()
    corr = np.eye(drift.size) if corr is None else np.asarray(corr, float)
    return PosteriorSamples.from_point({segment_id: WienerParams(drift, sd, corr)}, **kw)


def series_at(start, t_last=1000.0, segment_id=0):
    start = np.atleast_1d(np.asarray(start, float))
    return SegmentSeries(segment_id, np.array([t_last - 90.0, t_last]),
                         np.vstack([start - 0.5, start]))


# --- predictive bands ----------------------------------------------------


def test_drift_only_bands():
    post = point([0.01, 0.02], 1e-12)
    s = series_at([1.0, 2.0])
    b = predictive_bands(post, s, horizon=1360.0, step=30.0)
    np.testing.assert_allclose(b.times, np.arange(1030.0, 1361.0, 30.0))
    expect = np.array([1.0, 2.0]) + np.outer(b.times - 1000.0, [0.01, 0.02])
    for a in range(3):
        np.testing.assert_allclose(b.values[:, a], expect, atol=1e-8)
    rows = list(b.rows())
    assert len(rows) == b.times.size * 3 * 2


def test_band_quantiles_monotone(rng):
    post = PosteriorSamples.from_point({0: random_params(rng, 3)}, n_draws=200)
    b = predictive_bands(post, series_at([1.0, 1.0, 1.0]), quantiles=(0.9, 0.1, 0.5),
                         horizon=2000.0, seed=3)
    np.testing.assert_array_equal(b.quantiles, [0.1, 0.5, 0.9])
    assert np.all(np.diff(b.values, axis=1) >= 0)


def test_predictive_matches_gaussian(rng):
    p = random_params(rng, 2)
    post = PosteriorSamples.from_point({0: p}, n_chains=2, n_draws=20000)
    d = predictive_draws(post, series_at([1.0, 2.0]), [1100.0], seed=1)[:, 0]
    np.testing.assert_allclose(d.mean(0), [1.0, 2.0] + 100 * p.drift, atol=5 * np.sqrt(100 * p.covariance.diagonal().max() / 40000))
    np.testing.assert_allclose(np.cov(d.T), 100 * p.covariance, rtol=0.05, atol=1e-6)


def test_bands_need_future_horizon():
    with pytest.raises(DataError):
        predictive_bands(point([0.01], 0.1), series_at([1.0]), horizon=900.0)


def test_maintenance_reset_in_predictive():
    hyp = Hyperparams(np.ones(1), np.ones(1), np.array([0.0]), np.array([1e-9]))
    post = point([0.01], 1e-12, hyper=hyp)
    s = series_at([5.0])
    d = predictive_draws(post, s, [1100.0, 1200.0], maint_mask=np.array([True, False]))
    # reset to exp(0) = 1 at day 1050, then drift
    np.testing.assert_allclose(d[:, :, 0], [[1.5, 2.5]] * d.shape[0], atol=1e-6)


# --- validation ----------------------------------------------------------


def test_crps_oracle(rng):
    x = rng.normal(size=(300, 2))
    y = np.array([0.3, -1.0])
    brute = np.mean(np.abs(x - y), 0) - 0.5 * np.mean(np.abs(x[:, None] - x[None]), (0, 1))
    np.testing.assert_allclose(crps_ensemble(x, y), brute, rtol=1e-12)
    assert np.all(crps_ensemble(x, y) >= 0)


def test_validate_truth_on_line():
    post = point([0.01, 0.02], 1e-12)
    t = np.arange(8) * 90.0
    s = SegmentSeries(0, t, np.outer(t, [0.01, 0.02]) + 1.0)
    rep = validate(post, [s], holdout_count=3)
    assert rep.coverage == 1.0 and rep.n_points == 6
    assert rep.points_per_segment == {0: 3}
    assert len(rep.rows()) == 6
    np.testing.assert_allclose(rep.crps_by_indicator, 0.0, atol=1e-9)


def test_validate_calibrated_with_true_params(rng):
    params, series = {}, []
    for i in range(60):
        p = random_params(rng, 2)
        params[i] = p
        t = np.cumsum(rng.uniform(60, 120, 8))
        series.append(SegmentSeries(i, t, simulate_path(p, [1.0, 1.0], t, seed=i)))
    post = PosteriorSamples.from_point(params, n_chains=2, n_draws=1000)
    rep = validate(post, series, holdout_count=3, level=0.9, seed=5)
    assert rep.n_points == 360
    assert abs(rep.coverage - 0.9) < 3 * np.sqrt(0.09 / 360) + 0.01


def test_validate_errors():
    post = point([0.01], 0.1)
    with pytest.raises(DataError):
        validate(post, [series_at([1.0])], holdout_count=3)
    with pytest.raises(DataError):
        validate(post, [series_at([1.0])], holdout_count=0)


# --- hitting times -------------------------------------------------------


def test_drift_only_hit_time():
    post = point([0.1], 1e-12)
    r = hitting_time(post, 0, Thresholds([10.0]), start=[0.0], n_paths=50)
    np.testing.assert_allclose(r.times, 100.0, atol=1e-6)
    assert r.censored_fraction == 0.0
    np.testing.assert_array_equal(r.first_indicator, 0)


def test_inverse_gaussian_oracle():
    mu, sd, a = 0.1, 0.3, 10.0
    post = point([mu], sd)
    r = hitting_time(post, 0, Thresholds([a]), start=[0.0], n_paths=20000, seed=1, horizon=1e5)
    lam = a * a / sd ** 2
    ig = stats.invgauss(mu=(a / mu) / lam, scale=lam)
    assert r.censored_fraction == 0.0
    assert r.times.mean() == pytest.approx(a / mu, rel=0.015)
    # the 1-day grid makes crossings up to one step late
    assert stats.kstest(r.times, ig.cdf).statistic < 0.02
    assert stats.kstest(r.times - 0.5, ig.cdf).pvalue > 1e-3


def test_grid_refinement_reduces_bias():
    post = point([0.1], 0.3)
    kw = dict(start=[0.0], n_paths=20000, seed=2, horizon=1e5)
    coarse = hitting_time(post, 0, Thresholds([10.0]), dt=4.0, **kw).times.mean()
    fine = hitting_time(post, 0, Thresholds([10.0]), dt=0.5, **kw).times.mean()
    assert abs(fine - 100.0) < abs(coarse - 100.0)
    kw["n_paths"] = 50000
    one = hitting_time(post, 0, Thresholds([10.0]), dt=1.0, **kw).median
    half = hitting_time(post, 0, Thresholds([10.0]), dt=0.5, **kw).median
    assert abs(one - half) < 1.0


def test_min_of_independent_indicators():
    post = point([0.1, 0.1], 0.3)
    r = hitting_time(post, 0, Thresholds([10.0, 10.0]), start=[0.0, 0.0],
                     n_paths=20000, seed=4, horizon=1e5)
    lam = 100.0 / 0.09
    ig = stats.invgauss(mu=100.0 / lam, scale=lam)
    cdf = lambda t: 1.0 - ig.sf(t) ** 2
    assert stats.kstest(r.times - 0.5, cdf).statistic < 0.015
    np.testing.assert_allclose(r.first_hit_fractions, [0.5, 0.5], atol=0.02)


def test_monotone_in_drift():
    kw = dict(start=[0.0], n_paths=4000, seed=9)
    slow = hitting_time(point([0.05], 0.2), 0, Thresholds([10.0]), **kw)
    fast = hitting_time(point([0.08], 0.2), 0, Thresholds([10.0]), **kw)
    assert fast.median < slow.median
    # same noise draws: no path crosses later with the larger drift
    assert np.all(fast.times <= slow.times)
    assert np.all(fast.quantiles([0.1, 0.5, 0.9]) < slow.quantiles([0.1, 0.5, 0.9]))


def test_censoring_and_fractions(rng):
    post = PosteriorSamples.from_point({0: random_params(rng, 3)}, n_draws=50)
    r = hitting_time(post, 0, Thresholds([3.0, 3.5, 4.0]), start=[0.5, 0.5, 0.5],
                     n_paths=3000, horizon=400.0, seed=1)
    assert r.first_hit_fractions.sum() + r.censored_fraction == pytest.approx(1.0)
    assert np.all(np.isinf(r.times[r.first_indicator == -1]))
    assert np.all(r.times[r.hit] <= 400.0)
    none = hitting_time(point([0.0], 1e-9), 0, Thresholds([5.0]), start=[0.0],
                        n_paths=100, horizon=50.0)
    assert none.censored_fraction == 1.0 and np.isinf(none.median)
    np.testing.assert_array_equal(none.first_hit_probabilities, [0.0])
    assert none.median_se() == np.inf


def test_hit_determinism_and_chunking():
    post = point([0.05, 0.04], 0.2, corr=[[1, 0.7], [0.7, 1]])
    kw = dict(start=[0.0, 0.0], n_paths=3000, seed=11)
    a = hitting_time(post, 0, Thresholds([8.0]), **kw)
    b = hitting_time(post, 0, Thresholds([8.0]), **kw)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.first_indicator, b.first_indicator)
    c = hitting_time(post, 0, Thresholds([8.0]), seed=12, start=[0.0, 0.0], n_paths=3000)
    assert not np.array_equal(a.times, c.times)


def test_hit_errors():
    post = point([0.05], 0.2)
    with pytest.raises(DataError, match="already exceeds"):
        hitting_time(post, 0, Thresholds([1.0]), start=[2.0])
    with pytest.raises(DataError):
        hitting_time(post, 3, Thresholds([5.0]), start=[0.0])
    with pytest.raises(DataError):
        hitting_time(post, 0, Thresholds([5.0, 5.0]), start=[0.0])
    with pytest.raises(DataError):
        hitting_time(post, 0, Thresholds([5.0]))


def test_convergence_gate(rng):
    mu = rng.normal(size=(2, 100, 1, 1))
    mu[1] += 5.0
    post = point([0.05], 0.2, n_draws=100)
    post.mu = np.abs(mu)
    post._diag = None
    with pytest.raises(ConvergenceError):
        hitting_time(post, 0, Thresholds([5.0]), start=[0.0], n_paths=10)
    r = hitting_time(post, 0, Thresholds([5.0]), start=[0.0], n_paths=10, force=True)
    assert r.n_paths == 10


def test_median_se_and_histogram():
    post = point([0.1], 0.3)
    r = hitting_time(post, 0, Thresholds([10.0]), start=[0.0], n_paths=4000, seed=3)
    se = r.median_se()
    assert 0 < se < 5
    edges, counts = r.histogram(bins=20)
    assert counts.sum() == r.hit.sum() and edges.size == 21


# --- model comparison ----------------------------------------------------


def test_identical_posteriors_give_zero_difference():
    post = point([0.05, 0.04], 0.2)
    cmp = compare_models(post, post, 0, Thresholds([8.0, 8.0]), start=[0.0, 0.0], n_paths=2000)
    assert cmp.median_difference == 0.0
    np.testing.assert_array_equal(cmp.multivariate_quantiles, cmp.univariate_quantiles)
    assert len(list(cmp.rows())) == 5


def test_correlation_delays_first_crossing():
    # positively correlated indicators cross together, so the minimum is later
    kw = dict(start=[0.0, 0.0], n_paths=8000, seed=5)
    multi = point([0.05, 0.05], 0.3, corr=[[1, 0.9], [0.9, 1]])
    uni = point([0.05, 0.05], 0.3, model_kind="univariate")
    cmp = compare_models(multi, uni, 0, Thresholds([8.0, 8.0]), **kw)
    assert cmp.median_difference < -3 * cmp.median_difference_se


def test_compare_errors():
    a = point([0.05], 0.2)
    b = point([0.05], 0.2, segment_id=1)
    with pytest.raises(DataError):
        compare_models(a, b, 0, Thresholds([5.0]), start=[0.0])
    c = point([0.05], 0.2, labels=("other",))
    with pytest.raises(DataError):
        compare_models(a, c, 0, Thresholds([5.0]), start=[0.0])
