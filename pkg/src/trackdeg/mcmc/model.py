"""Batched hierarchical posterior over all segments.

Segments are padded to a common number of intervals so that every block
update evaluates all segments with a handful of vectorised numpy calls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core_model import LOG_2PI, SegmentSeries
from ..errors import DataError, EmptySeriesError
from ..priors import (
    Hyperparams,
    HyperpriorConfig,
    halfnormal_logpdf,
    lkj_log_normalizer,
    lognormal_logpdf,
)

MODEL_KINDS = ("multivariate", "univariate")


class ModelData:
    """Padded interval arrays for a collection of segment series.

    Attributes
    ----------
    dt : ndarray, shape (S, K)
        Interval lengths (1.0 in padding).
    scale : ndarray, shape (S, K)
        Covariance multiplier per interval: ``dt`` or ``dt/2`` for maintained intervals.
    valid, maint : ndarray of bool, shape (S, K)
    dz : ndarray, shape (S, K, Q)
        Increments (ordinary intervals).
    zend : ndarray, shape (S, K, Q)
        End-of-interval observations (used by maintained intervals).
    event_seg, event_pos : ndarray of int, shape (E,)
        Segment row and interval column of each maintenance event.
    """

    def __init__(self, dataset: Sequence[SegmentSeries]):
        dataset = list(dataset)
        if not dataset:
            raise DataError("dataset is empty")
        nq = dataset[0].n_indicators
        labels = dataset[0].labels
        for s in dataset:
            if s.n_obs < 2:
                raise EmptySeriesError(
                    f"segment {s.segment_id}: need at least 2 observations"
                )
            if s.n_indicators != nq:
                raise DataError("all series must share the indicator count")
        ids = [s.segment_id for s in dataset]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate segment ids in dataset")
        self.series = dataset
        self.labels = tuple(labels)
        self.segment_ids = np.array(ids, dtype=int)
        n_seg = len(dataset)
        kmax = max(s.n_obs for s in dataset) - 1
        self.n_segments, self.n_intervals, self.n_indicators = n_seg, kmax, nq
        self.dt = np.ones((n_seg, kmax))
        self.valid = np.zeros((n_seg, kmax), dtype=bool)
        self.maint = np.zeros((n_seg, kmax), dtype=bool)
        self.dz = np.zeros((n_seg, kmax, nq))
        self.zend = np.zeros((n_seg, kmax, nq))
        self.zstart = np.zeros((n_seg, kmax, nq))
        for i, s in enumerate(dataset):
            n = s.n_obs - 1
            self.dt[i, :n] = np.diff(s.times)
            self.valid[i, :n] = True
            self.maint[i, :n] = s.flags[1:]
            self.dz[i, :n] = np.diff(s.observations, axis=0)
            self.zend[i, :n] = s.observations[1:]
            self.zstart[i, :n] = s.observations[:-1]
        self.scale = np.where(self.maint, 0.5 * self.dt, self.dt)
        self.log_scale = np.log(self.scale)
        self.n_valid = self.valid.sum(axis=1)
        self.event_seg, self.event_pos = np.nonzero(self.maint)
        self.n_events = self.event_seg.size
        self._ord_mask = (self.valid & ~self.maint)[..., None]

    def event_keys(self) -> list[tuple[int, int]]:
        """``(segment_id, k)`` per event with ``k`` the observation index."""
        return [
            (int(self.segment_ids[s]), int(p) + 1)
            for s, p in zip(self.event_seg, self.event_pos)
        ]

    def padded_zplus(self, zplus: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n_segments, self.n_intervals, self.n_indicators))
        if self.n_events:
            out[self.event_seg, self.event_pos] = zplus
        return out

    def residuals(self, mu, zplus):
        """Standardisation-ready residuals, shape (S, K, Q)."""
        drift = mu[:, None, :] * self.scale[..., None]
        ordinary = self.dz - drift
        if not self.n_events:
            return np.where(self._ord_mask, ordinary, 0.0)
        reset = self.zend - self.padded_zplus(zplus) - drift
        out = np.where(self.maint[..., None], reset, ordinary)
        return np.where(self.valid[..., None], out, 0.0)

    def interval_logdens(self, mu, chol, zplus):
        """Per-interval Gaussian log densities, shape (S, K); zero in padding.

        ``chol`` is the Cholesky factor of each segment's covariance, shape (S, Q, Q).
        """
        resid = self.residuals(mu, zplus)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            linv = np.linalg.inv(chol)
            w = np.einsum("sab,skb->ska", linv, resid)
            quad = np.sum(w * w, axis=-1) / self.scale
            logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
        nq = self.n_indicators
        dens = -0.5 * (quad + nq * (LOG_2PI + self.log_scale) + logdet[:, None])
        return np.where(self.valid, dens, 0.0)

    def event_logdens(self, mu, chol, zplus):
        """Log densities of the maintained intervals only, shape (E,)."""
        es, ep = self.event_seg, self.event_pos
        scale = self.scale[es, ep]
        resid = self.zend[es, ep] - zplus - mu[es] * scale[:, None]
        c = chol[es]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            w = np.linalg.solve(c, resid[..., None])[..., 0]
            quad = np.sum(w * w, axis=-1) / scale
            logdet = 2.0 * np.sum(np.log(np.diagonal(c, axis1=1, axis2=2)), axis=1)
        nq = self.n_indicators
        return -0.5 * (quad + nq * (LOG_2PI + self.log_scale[es, ep]) + logdet)

    def segment_loglik(self, mu, chol, zplus):
        return self.interval_logdens(mu, chol, zplus).sum(axis=1)


def batched_covariance_chol(sigma, corr_chol):
    """Cholesky factor of ``diag(sigma) R diag(sigma)`` given that of ``R``."""
    return sigma[:, :, None] * corr_chol


@dataclass
class State:
    """Natural-scale parameter assignment for every segment and event."""

    mu: np.ndarray  # (S, Q)
    sigma: np.ndarray  # (S, Q)
    corr: np.ndarray  # (S, Q, Q)
    zplus: np.ndarray  # (E, Q)
    hyper: Hyperparams

    def copy(self) -> "State":
        return State(
            self.mu.copy(), self.sigma.copy(), self.corr.copy(), self.zplus.copy(),
            Hyperparams(self.hyper.s_mu.copy(), self.hyper.s_sigma.copy(),
                        self.hyper.m_z.copy(), self.hyper.s_z.copy(), self.hyper.eta),
        )


def _hn_sum(x, scale):
    """Sum over rows of half-normal log densities, vectorised over columns."""
    return np.sum(halfnormal_logpdf(x, scale[None, :]), axis=0)


def log_prior_terms(state: State, data: ModelData, hyperprior: HyperpriorConfig,
                    model_kind: str = "multivariate") -> dict[str, float]:
    """Every prior and hyperprior contribution, keyed by group."""
    h = state.hyper
    terms = {
        "mu": float(np.sum(_hn_sum(state.mu, h.s_mu))),
        "sigma": float(np.sum(_hn_sum(state.sigma, h.s_sigma))),
        "zplus": float(np.sum(lognormal_logpdf(state.zplus, h.m_z[None, :], h.s_z[None, :])))
        if data.n_events else 0.0,
        "hyper": hyperprior.logpdf(h),
    }
    if model_kind == "multivariate" and data.n_indicators > 1:
        eta = hyperprior.eta
        try:
            chol = np.linalg.cholesky(state.corr)
        except np.linalg.LinAlgError:
            terms["corr"] = -np.inf
        else:
            logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
            terms["corr"] = float(
                np.sum((eta - 1.0) * logdet)
                - data.n_segments * lkj_log_normalizer(data.n_indicators, eta)
            )
    return terms


def log_posterior(state: State, data: ModelData, hyperprior: HyperpriorConfig,
                  model_kind: str = "multivariate") -> float:
    """Unnormalised log posterior on the natural parameter scale.

    Returns ``-inf`` for any state outside the support.
    """
    if (np.any(state.mu < 0) or np.any(state.sigma <= 0) or np.any(state.zplus <= 0)
            or np.any(state.hyper.s_mu <= 0) or np.any(state.hyper.s_sigma <= 0)
            or np.any(state.hyper.s_z <= 0) or np.any(state.hyper.m_z <= 0)):
        return -np.inf
    if model_kind == "univariate":
        corr = np.broadcast_to(np.eye(data.n_indicators), state.corr.shape)
    else:
        corr = state.corr
    try:
        chol_r = np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        return -np.inf
    prior = log_prior_terms(state, data, hyperprior, model_kind)
    total = sum(prior.values())
    if not np.isfinite(total):
        return -np.inf
    chol = batched_covariance_chol(state.sigma, chol_r)
    ll = data.segment_loglik(state.mu, chol, state.zplus)
    value = float(np.sum(ll) + total)
    return value if np.isfinite(value) else -np.inf
