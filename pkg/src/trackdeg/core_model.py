"""Multivariate Wiener degradation process with imperfect-maintenance resets.

Time is measured in days and indicator values in millimetres.  An inspection
interval ``k`` is the half-open span ``(t[k-1], t[k]]``; when it contains a
tamping the reset is placed at its midpoint, so the observation at ``t[k]``
is ``z_plus + mu * dt/2`` plus Gaussian noise with covariance ``Sigma * dt/2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DataError,
    DecompositionError,
    EmptySeriesError,
    ModelSpecificationError,
    NumericError,
)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class SegmentSeries:
    """Inspection history of one track segment.

    Parameters
    ----------
    segment_id : int
        Segment identifier.
    times : array_like, shape (K,)
        Strictly increasing inspection times in days.
    observations : array_like, shape (K, Nq)
        Indicator values (mm) at each inspection.
    maint_flags : array_like of bool, shape (K,), optional
        ``maint_flags[k]`` is true when tamping happened in ``(t[k-1], t[k]]``.
        ``None`` means maintenance has not been identified yet.
    labels : sequence of str, optional
        Indicator names; defaults to ``z0, z1, ...``.
    """

    segment_id: int
    times: np.ndarray
    observations: np.ndarray
    maint_flags: np.ndarray | None = None
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.segment_id = int(self.segment_id)
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        self.observations = obs
        if obs.shape[0] != self.times.size:
            raise DataError(
                f"segment {self.segment_id}: {self.times.size} times but "
                f"{obs.shape[0]} observations"
            )
        if obs.shape[1] < 1:
            raise DataError(f"segment {self.segment_id}: no indicators")
        if not np.all(np.isfinite(obs)) or not np.all(np.isfinite(self.times)):
            raise DataError(f"segment {self.segment_id}: non-finite values")
        if np.any(np.diff(self.times) <= 0):
            raise DataError(
                f"segment {self.segment_id}: inspection times must be strictly increasing"
            )
        if self.maint_flags is not None:
            flags = np.asarray(self.maint_flags, dtype=bool).reshape(-1)
            if flags.size != self.times.size:
                raise DataError(
                    f"segment {self.segment_id}: maint_flags length {flags.size} "
                    f"!= {self.times.size}"
                )
            if flags.size and flags[0]:
                raise DataError(
                    f"segment {self.segment_id}: maint_flags[0] must be false"
                )
            self.maint_flags = flags
        if not self.labels:
            self.labels = tuple(f"z{q}" for q in range(obs.shape[1]))
        else:
            self.labels = tuple(str(s) for s in self.labels)
            if len(self.labels) != obs.shape[1]:
                raise DataError(
                    f"segment {self.segment_id}: {len(self.labels)} labels for "
                    f"{obs.shape[1]} indicators"
                )

    @property
    def n_obs(self) -> int:
        return self.times.size

    @property
    def n_indicators(self) -> int:
        return self.observations.shape[1]

    @property
    def flags(self) -> np.ndarray:
        """Maintenance flags, all false when not yet identified."""
        if self.maint_flags is None:
            return np.zeros(self.n_obs, dtype=bool)
        return self.maint_flags

    @property
    def maintenance_intervals(self) -> list[int]:
        return [int(k) for k in np.flatnonzero(self.flags)]

    def with_flags(self, flags) -> "SegmentSeries":
        """Copy with new maintenance flags; ``None`` clears them."""
        flags = None if flags is None else np.asarray(flags, dtype=bool)
        return SegmentSeries(
            self.segment_id, self.times.copy(), self.observations.copy(), flags, self.labels,
        )

    def head(self, n: int) -> "SegmentSeries":
        """First ``n`` inspections."""
        flags = None if self.maint_flags is None else self.maint_flags[:n].copy()
        return SegmentSeries(
            self.segment_id, self.times[:n].copy(), self.observations[:n].copy(),
            flags, self.labels,
        )

    def select(self, indicators: Sequence[int]) -> "SegmentSeries":
        """Series restricted to (and reordered by) the given indicator indices."""
        idx = list(indicators)
        flags = None if self.maint_flags is None else self.maint_flags.copy()
        return SegmentSeries(
            self.segment_id, self.times.copy(), self.observations[:, idx].copy(),
            flags, tuple(self.labels[q] for q in idx),
        )


@dataclass
class WienerParams:
    """Drift, marginal standard deviations and correlation of one segment."""

    drift: np.ndarray
    marginal_sd: np.ndarray
    correlation: np.ndarray | None = None

    def __post_init__(self):
        self.drift = np.atleast_1d(np.asarray(self.drift, dtype=float))
        self.marginal_sd = np.atleast_1d(np.asarray(self.marginal_sd, dtype=float))
        n = self.drift.size
        if self.marginal_sd.size != n:
            raise DataError("drift and marginal_sd lengths differ")
        if self.correlation is None:
            self.correlation = np.eye(n)
        self.correlation = np.atleast_2d(np.asarray(self.correlation, dtype=float))
        if self.correlation.shape != (n, n):
            raise DataError(f"correlation must be {n}x{n}")
        if not np.all(np.isfinite(self.drift)) or np.any(self.drift < 0):
            raise DataError("drift must be finite and nonnegative")
        if not np.all(np.isfinite(self.marginal_sd)) or np.any(self.marginal_sd <= 0):
            raise DataError("marginal_sd must be finite and positive")
        check_correlation(self.correlation)

    @property
    def n_indicators(self) -> int:
        return self.drift.size

    @property
    def covariance(self) -> np.ndarray:
        return build_covariance(self.marginal_sd, self.correlation)

    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor of the covariance, ``D chol(R)``; robust to tiny sds."""
        return self.marginal_sd[:, None] * check_correlation(self.correlation)


def _cholesky(a: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError("matrix is not positive definite") from exc


def check_correlation(r: np.ndarray, atol: float = 1e-8) -> np.ndarray:
    """Validate a correlation matrix and return its Cholesky factor."""
    r = np.asarray(r, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise DecompositionError("correlation must be square")
    if not np.allclose(r, r.T, atol=atol):
        raise DecompositionError("correlation must be symmetric")
    if not np.allclose(np.diag(r), 1.0, atol=atol):
        raise DecompositionError("correlation must have a unit diagonal")
    return _cholesky(r)


def build_covariance(marginal_sd, correlation) -> np.ndarray:
    """Covariance ``D R D`` with ``D = diag(marginal_sd)``.

    Raises
    ------
    DecompositionError
        If ``correlation`` is not a valid positive-definite correlation matrix
        or any standard deviation is non-positive.
    """
    sd = np.atleast_1d(np.asarray(marginal_sd, dtype=float))
    if np.any(~np.isfinite(sd)) or np.any(sd <= 0):
        raise DecompositionError("marginal standard deviations must be positive")
    check_correlation(correlation)
    r = np.asarray(correlation, dtype=float)
    cov = sd[:, None] * r * sd[None, :]
    return 0.5 * (cov + cov.T)


def increments(series: SegmentSeries) -> list[tuple[float, np.ndarray, bool]]:
    """Per-interval ``(dt, dz, maintained)`` tuples, ``K - 1`` of them."""
    if series.n_obs < 2:
        raise EmptySeriesError(
            f"segment {series.segment_id}: need at least 2 observations"
        )
    dt = np.diff(series.times)
    dz = np.diff(series.observations, axis=0)
    flags = series.flags
    return [(float(dt[j]), dz[j], bool(flags[j + 1])) for j in range(dt.size)]


def _reset_matrix(series: SegmentSeries, post_maint: Mapping | None) -> np.ndarray:
    """Post-maintenance values aligned with observation index; NaN where unused."""
    nq = series.n_indicators
    out = np.full((series.n_obs, nq), np.nan)
    post_maint = post_maint or {}
    for k in series.maintenance_intervals:
        if k not in post_maint:
            raise ModelSpecificationError(
                f"segment {series.segment_id}: no post-maintenance state for "
                f"interval {k}"
            )
        vals = np.atleast_1d(np.asarray(post_maint[k], dtype=float))
        if vals.size != nq:
            raise ModelSpecificationError(
                f"segment {series.segment_id}: post-maintenance state for interval "
                f"{k} has {vals.size} values, expected {nq}"
            )
        out[k] = vals
    return out


def interval_residuals(drift, series: SegmentSeries, post_maint: Mapping | None = None):
    """Residuals and variance multipliers for each interval.

    Returns
    -------
    resid : ndarray, shape (K-1, Nq)
        ``dz - mu*dt`` for ordinary intervals, ``z_k - z_plus - mu*dt/2`` for
        maintained ones.
    scale : ndarray, shape (K-1,)
        ``dt`` or ``dt/2``; the interval covariance is ``scale * Sigma``.
    """
    if series.n_obs < 2:
        raise EmptySeriesError(
            f"segment {series.segment_id}: need at least 2 observations"
        )
    drift = np.atleast_1d(np.asarray(drift, dtype=float))
    dt = np.diff(series.times)
    maint = series.flags[1:]
    scale = np.where(maint, 0.5 * dt, dt)
    resid = np.diff(series.observations, axis=0) - drift[None, :] * scale[:, None]
    if maint.any():
        resets = _reset_matrix(series, post_maint)[1:]
        alt = series.observations[1:] - resets - drift[None, :] * scale[:, None]
        resid = np.where(maint[:, None], alt, resid)
    return resid, scale


def gaussian_loglik_chol(resid: np.ndarray, scale: np.ndarray, chol: np.ndarray) -> float:
    """Sum of log N(resid_k; 0, scale_k * L L^T) over rows."""
    nq = chol.shape[0]
    w = np.linalg.solve(chol, resid.T)
    quad = np.sum(w * w, axis=0) / scale
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * np.sum(quad + nq * (LOG_2PI + np.log(scale)) + logdet))


def loglik_multivariate(
    params: WienerParams, series: SegmentSeries, post_maint: Mapping | None = None
) -> float:
    """Log-likelihood of a segment's inspections under the multivariate model.

    Ordinary intervals contribute the Gaussian density of the increment with
    mean ``mu*dt`` and covariance ``Sigma*dt``; maintained intervals contribute
    the density of the end-of-interval state with mean ``z_plus + mu*dt/2``
    and covariance ``Sigma*dt/2``.

    Parameters
    ----------
    params : WienerParams
    series : SegmentSeries
    post_maint : mapping of int to array_like, optional
        Post-tamping state for every flagged interval index ``k``.
    """
    if params.n_indicators != series.n_indicators:
        raise ModelSpecificationError("parameter and series dimensions differ")
    chol = params.cholesky()
    resid, scale = interval_residuals(params.drift, series, post_maint)
    value = gaussian_loglik_chol(resid, scale, chol)
    if not np.isfinite(value):
        raise NumericError(f"segment {series.segment_id}: non-finite log-likelihood")
    return value


def loglik_univariate(
    drift: float,
    variance: float,
    series: SegmentSeries,
    indicator: int,
    post_maint: Mapping | None = None,
) -> float:
    """Log-likelihood of a single indicator as an independent Wiener process."""
    if not variance > 0:
        raise ModelSpecificationError("variance must be positive")
    sub = series.select([indicator])
    pm = None
    if post_maint:
        pm = {
            k: np.atleast_1d(np.asarray(v, dtype=float))[[indicator]]
            for k, v in post_maint.items()
        }
    resid, scale = interval_residuals([drift], sub, pm)
    r = resid[:, 0]
    value = float(-0.5 * np.sum(r * r / (variance * scale) + LOG_2PI + np.log(variance * scale)))
    if not np.isfinite(value):
        raise NumericError(f"segment {series.segment_id}: non-finite log-likelihood")
    return value


def simulate_path(
    params: WienerParams,
    start,
    times,
    maint_schedule: Mapping | None = None,
    seed=None,
) -> np.ndarray:
    """Sample the process at ``times`` starting from ``start`` at ``times[0]``.

    ``maint_schedule`` maps an interval index ``k`` (the interval ending at
    ``times[k]``) to the post-tamping state; the reset happens at the interval
    midpoint and degradation continues from there.

    Returns
    -------
    ndarray, shape (len(times), Nq)
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    if np.any(np.diff(times) <= 0):
        raise DataError("times must be strictly increasing")
    rng = np.random.default_rng(seed)
    chol = params.cholesky()
    nq = params.n_indicators
    start = np.atleast_1d(np.asarray(start, dtype=float))
    if start.size != nq:
        raise DataError("start state has the wrong dimension")
    maint_schedule = maint_schedule or {}
    out = np.empty((times.size, nq))
    out[0] = start
    noise = rng.standard_normal((times.size - 1, nq))
    for k in range(1, times.size):
        dt = times[k] - times[k - 1]
        if k in maint_schedule:
            base = np.atleast_1d(np.asarray(maint_schedule[k], dtype=float))
            dt = 0.5 * dt
        else:
            base = out[k - 1]
        out[k] = base + params.drift * dt + np.sqrt(dt) * (chol @ noise[k - 1])
    return out


def simulate_paths(drift, chol, start, t0, times, resets=None, rng=None) -> np.ndarray:
    """Batched forward simulation, one path per parameter draw.

    Parameters
    ----------
    drift : ndarray, shape (M, Nq)
    chol : ndarray, shape (M, Nq, Nq)
        Cholesky factors of the covariances.
    start : array_like, shape (Nq,) or (M, Nq)
        State at time ``t0``.
    times : array_like, shape (T,)
        Strictly increasing times after ``t0``.
    resets : mapping of int to ndarray (M, Nq), optional
        Post-tamping state for the interval ending at ``times[j]``; the reset
        happens at that interval's midpoint.

    Returns
    -------
    ndarray, shape (M, T, Nq)
    """
    rng = np.random.default_rng(rng)
    times = np.asarray(times, dtype=float).reshape(-1)
    grid = np.concatenate([[float(t0)], times])
    if np.any(np.diff(grid) <= 0):
        raise DataError("prediction times must be strictly increasing and after t0")
    m, nq = drift.shape
    state = np.broadcast_to(np.asarray(start, dtype=float), (m, nq)).copy()
    resets = resets or {}
    out = np.empty((m, times.size, nq))
    eps = rng.standard_normal((times.size, m, nq))
    for j in range(times.size):
        dt = grid[j + 1] - grid[j]
        if j in resets:
            state = np.asarray(resets[j], dtype=float).copy()
            dt = 0.5 * dt
        state = state + drift * dt + np.sqrt(dt) * np.einsum("mab,mb->ma", chol, eps[j])
        out[:, j] = state
    return out
