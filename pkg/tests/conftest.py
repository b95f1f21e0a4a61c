import numpy as np
import pytest

from trackdeg.core_model import SegmentSeries, WienerParams
from trackdeg.priors import lkj_sample


def random_params(rng, nq, diagonal=False):
    drift = rng.uniform(0.0, 0.05, nq)
    sd = rng.uniform(0.05, 0.5, nq)
    corr = np.eye(nq) if diagonal or nq == 1 else lkj_sample(nq, 2.0, rng)
    return WienerParams(drift, sd, corr)


def random_series(rng, nq, n_obs=10, p_maint=0.0, segment_id=0):
    """Random series with optional maintenance flags and matching resets."""
    times = np.cumsum(rng.uniform(30.0, 150.0, n_obs))
    obs = rng.uniform(0.5, 8.0, (n_obs, nq))
    flags = np.zeros(n_obs, dtype=bool)
    flags[1:] = rng.uniform(size=n_obs - 1) < p_maint
    post = {int(k): rng.uniform(0.5, 4.0, nq) for k in np.flatnonzero(flags)}
    return SegmentSeries(segment_id, times, obs, flags), post


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
