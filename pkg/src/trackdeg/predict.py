"""Posterior-predictive trajectories, holdout scoring and threshold hitting times."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core_model import SegmentSeries, simulate_paths
from .errors import DataError
from .mcmc.posterior import PosteriorSamples

DEFAULT_HORIZON = 3650.0
THRESHOLD_LABELS = ("M3", "M1", "D7", "D1")


@dataclass
class Thresholds:
    """Per-indicator maintenance limits (mm) for one threshold class."""

    limits: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        self.limits = np.atleast_1d(np.asarray(self.limits, dtype=float))
        if np.any(~np.isfinite(self.limits)) or np.any(self.limits <= 0):
            raise DataError("threshold limits must be positive and finite")


def _draw_subset(n_total: int, max_draws: int | None) -> np.ndarray:
    if max_draws is None or max_draws >= n_total:
        return np.arange(n_total)
    return np.linspace(0, n_total - 1, max_draws).round().astype(int)


def _segment_arrays(samples: PosteriorSamples, segment_id: int, idx=None):
    mu, sigma, corr = samples.segment_draws(segment_id)
    if idx is not None:
        mu, sigma, corr = mu[idx], sigma[idx], corr[idx]
    chol_r = np.linalg.cholesky(corr)
    return mu, sigma, sigma[:, :, None] * chol_r


# ---------------------------------------------------------------------------
# predictive bands and holdout validation
# ---------------------------------------------------------------------------


@dataclass
class PredictiveBands:
    segment_id: int
    times: np.ndarray
    quantiles: np.ndarray
    values: np.ndarray  # (T, n_quantiles, Q)
    labels: tuple

    def rows(self):
        """``(time, indicator, quantile, value)`` records, time-major."""
        for j, t in enumerate(self.times):
            for q, lab in enumerate(self.labels):
                for a, lev in enumerate(self.quantiles):
                    yield (float(t), lab, float(lev), float(self.values[j, a, q]))


def predictive_draws(samples, series: SegmentSeries, times, seed=0, max_draws=None,
                     maint_mask=None, paths_per_draw: int = 1) -> np.ndarray:
    """Forward simulations from the last observation of ``series``.

    ``maint_mask[j]`` marks the interval ending at ``times[j]`` as containing
    tamping; its post-tamping state is drawn from the log-normal predictive
    of the same posterior draw.

    Returns
    -------
    ndarray, shape (M * paths_per_draw, T, Q)
    """
    rng = np.random.default_rng(seed)
    m_total = samples.n_chains * samples.n_draws
    idx = np.repeat(_draw_subset(m_total, max_draws), paths_per_draw)
    mu, _, chol = _segment_arrays(samples, series.segment_id, idx)
    resets = {}
    if maint_mask is not None and np.any(maint_mask):
        hyp = samples.hyper_draws()
        m_z, s_z = hyp["m_z"][idx], hyp["s_z"][idx]
        for j in np.flatnonzero(maint_mask):
            resets[int(j)] = np.exp(m_z + s_z * rng.standard_normal(m_z.shape))
    return simulate_paths(mu, chol, series.observations[-1], series.times[-1],
                          times, resets, rng)


def predictive_bands(samples: PosteriorSamples, series: SegmentSeries, horizon=None,
                     quantiles: Sequence[float] = (0.025, 0.5, 0.975), times=None,
                     step: float = 30.0, seed=0, max_draws=None, force=False) -> PredictiveBands:
    """Pointwise predictive quantiles after the last training observation.

    Either ``times`` or ``horizon`` (absolute time, in days) must be given;
    with ``horizon`` the grid runs in ``step``-day increments.
    """
    samples.check_converged(force=force)
    t_last = series.times[-1]
    if times is None:
        if horizon is None or horizon <= t_last:
            raise DataError("horizon must exceed the last training time")
        times = np.arange(t_last + step, horizon + 1e-9, step)
    times = np.asarray(times, dtype=float)
    q = np.asarray(sorted(quantiles), dtype=float)
    draws = predictive_draws(samples, series, times, seed, max_draws)
    values = np.quantile(draws, q, axis=0)  # (nq, T, Q)
    return PredictiveBands(series.segment_id, times, q, np.moveaxis(values, 0, 1), samples.labels)


def crps_ensemble(draws, obs) -> np.ndarray:
    """Continuous ranked probability score of an ensemble, along axis 0."""
    x = np.sort(np.asarray(draws, dtype=float), axis=0)
    m = x.shape[0]
    term1 = np.mean(np.abs(x - obs[None]), axis=0)
    w = (2.0 * np.arange(1, m + 1) - m - 1).reshape((m,) + (1,) * (x.ndim - 1))
    term2 = np.sum(w * x, axis=0) / (m * m)
    return term1 - term2


@dataclass
class ValidationReport:
    level: float
    labels: tuple
    coverage_by_indicator: np.ndarray
    coverage: float
    crps_by_indicator: np.ndarray
    n_points: int
    points_per_segment: dict
    records: list = field(default_factory=list)

    def rows(self):
        """``(segment, k, indicator, observed, lower, upper, inside, crps)`` records."""
        return self.records


def validate(samples: PosteriorSamples, dataset: Sequence[SegmentSeries], holdout_count: int = 3,
             level: float = 0.95, seed=0, max_draws=None, force=False) -> ValidationReport:
    """Score the last ``holdout_count`` observations of each series.

    ``samples`` must come from a fit on the series with those observations
    removed; no refitting happens here.  Held-out intervals flagged as
    maintained get a simulated tamping at their midpoint.
    """
    if holdout_count < 1:
        raise DataError("holdout_count must be positive")
    samples.check_converged(force=force)
    lo_q, hi_q = 0.5 * (1.0 - level), 1.0 - 0.5 * (1.0 - level)
    nq = samples.n_indicators
    inside_all, crps_all, records, per_seg = [], [], [], {}
    seeds = np.random.SeedSequence(seed).spawn(len(dataset))
    for s, ss in zip(dataset, seeds):
        if s.n_obs <= holdout_count:
            raise DataError(
                f"segment {s.segment_id}: {s.n_obs} observations cannot hold out {holdout_count}"
            )
        cut = s.n_obs - holdout_count
        train = s.head(cut)
        hold_t = s.times[cut:]
        hold_z = s.observations[cut:]
        draws = predictive_draws(samples, train, hold_t, ss, max_draws,
                                 maint_mask=s.flags[cut:])
        lo, hi = np.quantile(draws, [lo_q, hi_q], axis=0)
        inside = (hold_z >= lo) & (hold_z <= hi)
        crps = crps_ensemble(draws, hold_z)
        inside_all.append(inside)
        crps_all.append(crps)
        per_seg[s.segment_id] = holdout_count
        for j in range(holdout_count):
            for q in range(nq):
                records.append((s.segment_id, cut + j, samples.labels[q], float(hold_z[j, q]),
                                float(lo[j, q]), float(hi[j, q]), bool(inside[j, q]),
                                float(crps[j, q])))
    inside_all = np.concatenate(inside_all)
    crps_all = np.concatenate(crps_all)
    return ValidationReport(
        level, samples.labels, inside_all.mean(axis=0), float(inside_all.mean()),
        crps_all.mean(axis=0), int(inside_all.size), per_seg, records,
    )


# ---------------------------------------------------------------------------
# hitting times
# ---------------------------------------------------------------------------


@dataclass
class HittingTimeResult:
    """First-passage times of the earliest threshold crossing per simulated path.

    ``times`` is ``inf`` and ``first_indicator`` is -1 for censored paths.
    """

    segment_id: int
    times: np.ndarray
    first_indicator: np.ndarray
    labels: tuple
    horizon: float
    dt: float
    tie_count: int = 0

    @property
    def n_paths(self) -> int:
        return self.times.size

    @property
    def hit(self) -> np.ndarray:
        return np.isfinite(self.times)

    @property
    def censored_fraction(self) -> float:
        return float(np.mean(~self.hit))

    @property
    def first_hit_fractions(self) -> np.ndarray:
        """Share of all paths first crossing through each indicator."""
        counts = np.bincount(self.first_indicator[self.hit], minlength=len(self.labels))
        return counts / self.n_paths

    @property
    def first_hit_probabilities(self) -> np.ndarray:
        """Share of non-censored paths first crossing through each indicator."""
        n_hit = int(self.hit.sum())
        counts = np.bincount(self.first_indicator[self.hit], minlength=len(self.labels))
        return counts / n_hit if n_hit else np.zeros(len(self.labels))

    def quantiles(self, q) -> np.ndarray:
        """Quantiles of the hitting time, ``inf`` where censoring dominates."""
        return np.quantile(self.times, q, method="inverted_cdf")

    @property
    def median(self) -> float:
        return float(self.quantiles(0.5))

    def median_se(self) -> float:
        """Distribution-free standard error of the median from order statistics."""
        x = np.sort(self.times)
        n = x.size
        half = 1.96 * np.sqrt(n) / 2.0
        lo = x[max(int(np.floor(n / 2 - half)), 0)]
        hi = x[min(int(np.ceil(n / 2 + half)), n - 1)]
        if not np.isfinite(hi):
            return float("inf")
        return float((hi - lo) / (2 * 1.96))

    def histogram(self, bins=50):
        finite = self.times[self.hit]
        if finite.size == 0:
            return np.linspace(0, self.horizon, 2), np.zeros(1, dtype=int)
        counts, edges = np.histogram(finite, bins=bins)
        return edges, counts


def _hitting_chunk(mu, chol, sd, start, limits, horizon, dt, rng, block=128):
    """Simulate one chunk of paths; crossings inside a step use a Brownian-bridge test.

    A step whose end point exceeds a limit gets a linearly interpolated
    crossing time.  A step whose end points are both below is still counted
    as crossing with the bridge probability ``exp(-2 (a-x0)(a-x1) / (s^2 dt))``
    and is assigned the step's end time.
    """
    b, nq = mu.shape
    n_steps = int(np.ceil(horizon / dt - 1e-12))
    x = np.broadcast_to(start, (b, nq)).copy()
    times = np.full(b, np.inf)
    first = np.full(b, -1, dtype=int)
    ties = 0
    active = np.arange(b)  # paths that have not crossed yet
    sqdt = np.sqrt(dt)
    var_dt = (sd ** 2) * dt
    step0 = 0
    while step0 < n_steps and active.size:
        nb = min(block, n_steps - step0)
        m, ch, xa = mu[active], chol[active], x[active]
        # draws for every path of the chunk keep each path's noise independent
        # of which other paths have already crossed
        eps = rng.standard_normal((nb, b, nq))[:, active]
        u = rng.uniform(size=(nb, b, nq))[:, active]
        inc = m[None] * dt + sqdt * np.einsum("bij,sbj->sbi", ch, eps)
        path = xa[None] + np.cumsum(inc, axis=0)
        prev = np.concatenate([xa[None], path[:-1]], axis=0)
        gap0 = limits - prev
        gap1 = limits - path
        end_cross = gap1 <= 0
        with np.errstate(over="ignore", invalid="ignore"):
            p_bridge = np.exp(-2.0 * np.maximum(gap0, 0) * np.maximum(gap1, 0) / var_dt[active][None])
        cross = end_cross | (u < p_bridge)
        any_cross = cross.any(axis=2)
        has = any_cross.any(axis=0)
        if has.any():
            rows = np.flatnonzero(has)
            s_idx = np.argmax(any_cross[:, rows], axis=0)
            c = cross[s_idx, rows]
            e = end_cross[s_idx, rows]
            g0 = gap0[s_idx, rows]
            g1 = gap1[s_idx, rows]
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(e, g0 / (g0 - g1), 1.0)
            frac = np.clip(np.nan_to_num(frac, nan=1.0), 0.0, 1.0)
            t_q = (step0 + s_idx)[:, None] * dt + frac * dt
            t_q = np.where(c, t_q, np.inf)
            hit_paths = active[rows]
            first[hit_paths] = np.argmin(t_q, axis=1)
            times[hit_paths] = t_q[np.arange(rows.size), first[hit_paths]]
            ties += int(np.sum(c.sum(axis=1) > 1))
        x[active] = path[-1]
        active = active[~has]
        step0 += nb
    over = times > horizon
    times[over] = np.inf
    first[over] = -1
    return times, first, ties


def hitting_time(samples: PosteriorSamples, segment, thresholds: Thresholds,
                 horizon: float = DEFAULT_HORIZON, n_paths: int = 10000, seed=0,
                 dt: float = 1.0, start=None, chunk_size: int = 4096,
                 force=False) -> HittingTimeResult:
    """Monte-Carlo first-passage times from the current state of a segment.

    Parameters
    ----------
    samples : PosteriorSamples
    segment : SegmentSeries or int
        A series supplies the segment id and the start state (its last
        observation); with an id, ``start`` is required.
    thresholds : Thresholds
    horizon : float
        Censoring horizon in days after the start.
    n_paths : int
        Paths are spread evenly over the posterior draws.
    dt : float
        Simulation step in days.

    Notes
    -----
    Future tamping is not simulated.  Path chunks of ``chunk_size`` draw
    their noise from child seeds of ``seed``, so results depend only on
    ``(seed, n_paths, chunk_size)``.
    """
    if n_paths < 1:
        raise DataError("n_paths must be positive")
    samples.check_converged(force=force)
    if isinstance(segment, SegmentSeries):
        seg_id = segment.segment_id
        if start is None:
            start = segment.observations[-1]
    else:
        seg_id = int(segment)
        if start is None:
            raise DataError("start state required when passing a segment id")
    start = np.atleast_1d(np.asarray(start, dtype=float))
    nq = samples.n_indicators
    limits = thresholds.limits
    if limits.size == 1:
        limits = np.repeat(limits, nq)
    if limits.size != nq or start.size != nq:
        raise DataError("threshold/start dimension does not match the posterior")
    if np.any(start >= limits):
        raise DataError("start state already exceeds a threshold")
    mu_all, sd_all, chol_all = _segment_arrays(samples, seg_id)
    m_total = mu_all.shape[0]
    draw_idx = (np.arange(n_paths) * m_total) // n_paths
    times = np.empty(n_paths)
    first = np.empty(n_paths, dtype=int)
    ties = 0
    for c, lo in enumerate(range(0, n_paths, chunk_size)):
        hi = min(lo + chunk_size, n_paths)
        idx = draw_idx[lo:hi]
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(c,)))
        t, f, nt = _hitting_chunk(mu_all[idx], chol_all[idx], sd_all[idx], start,
                                  limits, horizon, dt, rng)
        times[lo:hi], first[lo:hi] = t, f
        ties += nt
    return HittingTimeResult(seg_id, times, first, samples.labels, float(horizon), float(dt), ties)


@dataclass
class ModelComparison:
    multivariate: HittingTimeResult
    univariate: HittingTimeResult
    quantile_levels: np.ndarray
    multivariate_quantiles: np.ndarray
    univariate_quantiles: np.ndarray

    @property
    def median_difference(self) -> float:
        """Univariate minus multivariate median hitting time (days)."""
        return self.univariate.median - self.multivariate.median

    @property
    def median_difference_se(self) -> float:
        return float(np.hypot(self.univariate.median_se(), self.multivariate.median_se()))

    def rows(self):
        for lev, a, b in zip(self.quantile_levels, self.multivariate_quantiles,
                             self.univariate_quantiles):
            yield (float(lev), float(a), float(b))


def compare_models(multi_samples: PosteriorSamples, uni_samples: PosteriorSamples, segment,
                   thresholds: Thresholds, horizon: float = DEFAULT_HORIZON,
                   n_paths: int = 10000, seed=0, dt: float = 1.0, start=None,
                   quantiles: Sequence[float] = (0.05, 0.25, 0.5, 0.75, 0.95),
                   force=False) -> ModelComparison:
    """Hitting-time summaries of two fits of the same data.

    A univariate fit has identity correlation, so its first crossing is the
    minimum over independently simulated indicators.  Both models use the
    same seed.
    """
    seg_id = segment.segment_id if isinstance(segment, SegmentSeries) else int(segment)
    for s in (multi_samples, uni_samples):
        s.segment_index(seg_id)
    if tuple(multi_samples.labels) != tuple(uni_samples.labels):
        raise DataError("posteriors disagree on indicators")
    kw = dict(horizon=horizon, n_paths=n_paths, seed=seed, dt=dt, start=start, force=force)
    a = hitting_time(multi_samples, segment, thresholds, **kw)
    b = hitting_time(uni_samples, segment, thresholds, **kw)
    lev = np.asarray(quantiles, dtype=float)
    return ModelComparison(a, b, lev, a.quantiles(lev), b.quantiles(lev))
