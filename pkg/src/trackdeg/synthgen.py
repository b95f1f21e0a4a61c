"""Ground-truth synthetic inspection data for recovery and calibration studies."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .core_model import SegmentSeries, WienerParams
from .errors import ConfigError
from .priors import Hyperparams, lkj_sample


def default_hyper(n_indicators: int = 4) -> Hyperparams:
    """Plausible truth: ~1 mm drift and ~0.6 mm noise per quarter, resets near 3 mm."""
    return Hyperparams(
        s_mu=np.full(n_indicators, 0.01),
        s_sigma=np.full(n_indicators, 0.06),
        m_z=np.full(n_indicators, np.log(3.0)),
        s_z=np.full(n_indicators, 0.25),
    )


def block_correlation(n_pairs: int = 2, within: float = 0.8, cross: float = 0.0) -> np.ndarray:
    """Correlation with ``within`` inside consecutive index pairs and ``cross`` elsewhere."""
    d = 2 * n_pairs
    r = np.full((d, d), cross, dtype=float)
    for p in range(n_pairs):
        r[2 * p, 2 * p + 1] = r[2 * p + 1, 2 * p] = within
    np.fill_diagonal(r, 1.0)
    return r


@dataclass
class ScenarioSpec:
    """Description of a synthetic study.

    Per-segment truths come from ``params`` when given (one
    :class:`WienerParams` shared by all segments, or one per segment);
    otherwise drifts and marginal sds are drawn from half-normals with the
    scales in ``hyper`` and the correlation is ``correlation`` or an
    LKJ(``eta``) draw.

    ``tamping`` is ``"none"``, ``"threshold"`` (an inspection whose largest
    indicator exceeds ``tamping_threshold`` triggers tamping in the next
    interval) or ``"scheduled"`` (``tamping_schedule`` lists interval
    indices, applied to every segment, or maps segment id to indices).
    Post-tamping states are log-normal with the ``hyper`` parameters, or a
    zero-truncated normal with the same median and matching spread when
    ``zplus_dist == "truncnormal"``.
    """

    n_segments: int = 20
    n_indicators: int = 4
    labels: tuple = ()
    n_inspections: int = 20
    interval: float = 90.0
    jitter: int = 30
    hyper: Hyperparams | None = None
    params: WienerParams | Sequence[WienerParams] | None = None
    correlation: np.ndarray | None = None
    eta: float = 1.0
    start: np.ndarray | None = None
    tamping: str = "none"
    tamping_threshold: float = 12.0
    tamping_schedule: Sequence[int] | Mapping[int, Sequence[int]] = ()
    zplus_dist: str = "lognormal"
    ineffective_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_segments < 1 or self.n_indicators < 1 or self.n_inspections < 2:
            raise ConfigError("need n_segments >= 1, n_indicators >= 1, n_inspections >= 2")
        if self.interval <= 0 or self.jitter < 0 or self.jitter >= self.interval:
            raise ConfigError("need 0 <= jitter < interval")
        if self.tamping not in ("none", "threshold", "scheduled"):
            raise ConfigError(f"unknown tamping rule {self.tamping!r}")
        if self.zplus_dist not in ("lognormal", "truncnormal"):
            raise ConfigError(f"unknown post-tamping distribution {self.zplus_dist!r}")
        if not 0 <= self.ineffective_fraction <= 1:
            raise ConfigError("ineffective_fraction must lie in [0, 1]")
        if self.hyper is None:
            self.hyper = default_hyper(self.n_indicators)
        if self.hyper.n_indicators != self.n_indicators:
            raise ConfigError("hyperparameter dimension does not match n_indicators")
        if not self.labels:
            self.labels = tuple(f"z{q}" for q in range(self.n_indicators))
        if len(self.labels) != self.n_indicators:
            raise ConfigError("labels do not match n_indicators")
        if self.start is not None:
            self.start = np.atleast_1d(np.asarray(self.start, dtype=float))
            if self.start.size != self.n_indicators:
                raise ConfigError("start has the wrong dimension")
        if self.tamping == "threshold":
            if self.start is not None and np.max(self.start) >= self.tamping_threshold:
                raise ConfigError("tamping threshold is not above the initial state")
            if np.any(np.exp(self.hyper.m_z) >= self.tamping_threshold):
                raise ConfigError("median post-tamping value is not below the tamping threshold")


@dataclass
class SyntheticTruth:
    """Everything the fitter estimates, plus the true maintenance schedule."""

    params: dict = field(default_factory=dict)  # segment id -> WienerParams
    zplus: dict = field(default_factory=dict)  # (segment id, k) -> state after reset
    pre_tamping: dict = field(default_factory=dict)  # (segment id, k) -> triggering obs
    flags: dict = field(default_factory=dict)  # segment id -> bool array
    work_orders: list = field(default_factory=list)  # (segment id, day)
    ineffective: list = field(default_factory=list)  # (segment id, k)
    hyper: Hyperparams | None = None

    def events(self) -> set:
        return set(self.zplus)

    def records(self) -> list[tuple[str, int, float]]:
        """``(parameter, segment, value)`` rows with posterior column names."""
        rows = []
        for sid in sorted(self.params):
            p = self.params[sid]
            nq = p.n_indicators
            rows += [(f"mu[{sid}][{q}]", sid, p.drift[q]) for q in range(nq)]
            rows += [(f"sigma[{sid}][{q}]", sid, p.marginal_sd[q]) for q in range(nq)]
            rows += [
                (f"R[{sid}][{a}][{b}]", sid, p.correlation[a, b])
                for a in range(nq) for b in range(a + 1, nq)
            ]
        for (sid, k) in sorted(self.zplus):
            rows += [(f"zplus[{sid}][{k}][{q}]", sid, v) for q, v in enumerate(self.zplus[(sid, k)])]
        for (sid, k) in sorted(self.zplus):
            rows.append((f"maint[{sid}][{k}]", sid, 1.0))
        if self.hyper is not None:
            for name in ("s_mu", "s_sigma", "m_z", "s_z"):
                rows += [(f"hyper.{name}[{q}]", -1, v) for q, v in enumerate(getattr(self.hyper, name))]
        return [(n, int(s), float(v)) for n, s, v in rows]


def _segment_params(spec: ScenarioSpec, i: int, rng) -> WienerParams:
    if spec.params is not None:
        if isinstance(spec.params, WienerParams):
            return spec.params
        return spec.params[i]
    h = spec.hyper
    mu = np.abs(rng.normal(0.0, h.s_mu))
    sd = np.abs(rng.normal(0.0, h.s_sigma))
    if spec.correlation is not None:
        corr = np.asarray(spec.correlation, dtype=float)
    elif spec.n_indicators > 1:
        corr = lkj_sample(spec.n_indicators, spec.eta, seed=rng)
    else:
        corr = np.eye(1)
    return WienerParams(mu, sd, corr)


def _draw_zplus(spec: ScenarioSpec, rng) -> np.ndarray:
    h = spec.hyper
    if spec.zplus_dist == "lognormal":
        return np.exp(rng.normal(h.m_z, h.s_z))
    med = np.exp(h.m_z)
    scale = med * h.s_z
    a = -med / scale
    return stats.truncnorm.rvs(a, np.inf, loc=med, scale=scale, random_state=rng)


def _schedule_for(spec: ScenarioSpec, sid: int) -> set:
    sched = spec.tamping_schedule
    if isinstance(sched, Mapping):
        return set(int(k) for k in sched.get(sid, ()))
    return set(int(k) for k in sched)


def generate(spec: ScenarioSpec) -> tuple[list[SegmentSeries], SyntheticTruth]:
    """Simulate every segment's inspections under the tamping rule.

    Inspection times are integer days: the nominal interval plus a uniform
    integer jitter in ``[-jitter, jitter]``.  Segment ``i`` uses its own
    child seed so segments are independent of generation order.
    """
    truth = SyntheticTruth(hyper=spec.hyper)
    dataset = []
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_segments + 1)
    nq, n = spec.n_indicators, spec.n_inspections
    for i in range(spec.n_segments):
        rng = np.random.default_rng(children[i])
        params = _segment_params(spec, i, rng)
        if params.n_indicators != nq:
            raise ConfigError("segment parameters do not match n_indicators")
        chol = params.cholesky()
        gaps = spec.interval + rng.integers(-spec.jitter, spec.jitter + 1, size=n - 1)
        times = np.concatenate([[0.0], np.cumsum(gaps)])
        z = np.empty((n, nq))
        z[0] = spec.start if spec.start is not None else _draw_zplus(spec, rng)
        flags = np.zeros(n, dtype=bool)
        scheduled = _schedule_for(spec, i)
        for k in range(1, n):
            dt = times[k] - times[k - 1]
            eps = rng.standard_normal(nq)
            tamp = (spec.tamping == "threshold" and np.max(z[k - 1]) > spec.tamping_threshold) or (
                spec.tamping == "scheduled" and k in scheduled)
            if tamp:
                zp = _draw_zplus(spec, rng)
                half = 0.5 * dt
                z[k] = zp + params.drift * half + np.sqrt(half) * (chol @ eps)
                flags[k] = True
                truth.zplus[(i, k)] = zp
                truth.pre_tamping[(i, k)] = z[k - 1].copy()
                truth.work_orders.append((i, float(times[k - 1] + np.floor(half))))
            else:
                z[k] = z[k - 1] + params.drift * dt + np.sqrt(dt) * (chol @ eps)
        truth.params[i] = params
        truth.flags[i] = flags
        dataset.append(SegmentSeries(i, times, z, flags, spec.labels))

    if spec.ineffective_fraction > 0:
        rng = np.random.default_rng(children[-1])
        n_bad = max(1, int(round(spec.ineffective_fraction * len(truth.zplus))))
        candidates = [
            (s.segment_id, k) for s in dataset for k in range(1, s.n_obs) if not s.flags[k]
        ]
        pick = rng.choice(len(candidates), size=min(n_bad, len(candidates)), replace=False)
        for j in sorted(pick):
            sid, k = candidates[j]
            s = dataset[sid]
            mid = s.times[k - 1] + np.floor(0.5 * (s.times[k] - s.times[k - 1]))
            truth.ineffective.append((sid, k))
            truth.work_orders.append((sid, float(mid)))
        truth.work_orders.sort()
    return dataset, truth
