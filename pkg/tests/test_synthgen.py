import numpy as np
import pytest

from trackdeg.core_model import WienerParams
from trackdeg.errors import ConfigError
from trackdeg.priors import Hyperparams
from trackdeg.synthgen import ScenarioSpec, block_correlation, generate


def test_zero_noise_zero_drift_constant():
    p = WienerParams(np.zeros(3), np.full(3, 1e-300))
    ds, _ = generate(ScenarioSpec(n_segments=2, n_indicators=3, params=p, start=[1, 2, 3]))
    for s in ds:
        np.testing.assert_array_equal(s.observations, np.tile([1.0, 2.0, 3.0], (s.n_obs, 1)))


def test_increment_covariance_moment():
    corr = block_correlation(2, 0.8, 0.1)
    p = WienerParams(np.full(4, 0.01), [0.05, 0.08, 0.04, 0.06], corr)
    spec = ScenarioSpec(n_segments=400, n_indicators=4, n_inspections=30, params=p,
                        start=np.full(4, 2.0), jitter=0, seed=4)
    ds, _ = generate(spec)
    inc = np.concatenate([np.diff(s.observations, axis=0) for s in ds])
    emp = np.cov(inc.T)
    target = p.covariance * 90.0
    assert np.linalg.norm(emp - target) / np.linalg.norm(target) < 0.05


def test_threshold_rule_consistency():
    p = WienerParams(np.full(2, 0.05), np.full(2, 0.05))
    spec = ScenarioSpec(n_segments=10, n_indicators=2, params=p, start=[3.0, 3.0],
                        tamping="threshold", tamping_threshold=12.0, seed=1)
    ds, truth = generate(spec)
    assert truth.pre_tamping
    for s in ds:
        for k in s.maintenance_intervals:
            assert np.max(s.observations[k - 1]) > 12.0
            np.testing.assert_array_equal(truth.pre_tamping[(s.segment_id, k)], s.observations[k - 1])


def test_inspection_schedule():
    ds, _ = generate(ScenarioSpec(n_segments=5, seed=2))
    for s in ds:
        gaps = np.diff(s.times)
        assert np.all((gaps >= 60) & (gaps <= 120))
        np.testing.assert_array_equal(gaps, np.round(gaps))
        assert not s.flags[0]


def test_same_seed_same_dataset():
    spec = dict(n_segments=4, tamping="scheduled", tamping_schedule=[5], seed=17)
    a, ta = generate(ScenarioSpec(**spec))
    b, tb = generate(ScenarioSpec(**spec))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.observations, y.observations)
        np.testing.assert_array_equal(x.times, y.times)
    assert ta.records() == tb.records()
    c, _ = generate(ScenarioSpec(**{**spec, "seed": 18}))
    assert not np.array_equal(a[0].observations, c[0].observations)


def test_truth_records_complete():
    ds, truth = generate(ScenarioSpec(n_segments=2, n_indicators=2, tamping="scheduled",
                                      tamping_schedule=[3], seed=0))
    names = {r[0] for r in truth.records()}
    assert {"mu[0][0]", "sigma[1][1]", "R[0][0][1]", "zplus[1][3][0]", "maint[0][3]",
            "hyper.m_z[1]"} <= names


def test_truncnormal_positive():
    ds, truth = generate(ScenarioSpec(n_segments=20, tamping="scheduled", tamping_schedule=[4, 9],
                                      zplus_dist="truncnormal", seed=3))
    assert all(np.all(v > 0) for v in truth.zplus.values())


def test_ineffective_tampings():
    ds, truth = generate(ScenarioSpec(n_segments=20, tamping="scheduled", tamping_schedule=[5, 12],
                                      ineffective_fraction=0.1, seed=3))
    assert len(truth.ineffective) == 4
    for sid, k in truth.ineffective:
        assert not ds[sid].flags[k]
    assert len(truth.work_orders) == 44


def test_spec_inconsistencies():
    with pytest.raises(ConfigError):
        ScenarioSpec(tamping="threshold", tamping_threshold=2.0, start=np.full(4, 5.0))
    with pytest.raises(ConfigError):
        ScenarioSpec(tamping="threshold", tamping_threshold=2.0)  # median reset 3 mm
    with pytest.raises(ConfigError):
        ScenarioSpec(jitter=100)
    with pytest.raises(ConfigError):
        ScenarioSpec(n_indicators=2, hyper=Hyperparams([1.0], [1.0], [1.0], [1.0]))
    with pytest.raises(ConfigError):
        ScenarioSpec(tamping="sometimes")
