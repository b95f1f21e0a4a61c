"""Adaptive random-walk Metropolis-within-Gibbs for the hierarchical Wiener model.

One sweep updates, in order: drifts, log marginal standard deviations,
unconstrained partial correlations (multivariate only), log post-tamping
states, then the hyperparameters.  Given the hyperparameters the segment
blocks are conditionally independent, so every segment (and every
maintenance event) is proposed and accepted separately but in one
vectorised pass.  Proposal covariances adapt during warmup only.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..core_model import SegmentSeries
from ..errors import ConfigError, InitializationError
from ..priors import (
    Hyperparams,
    HyperpriorConfig,
    corr_to_unconstrained,
    n_offdiag,
    unconstrained_to_corr,
)
from .model import MODEL_KINDS, ModelData, State, batched_covariance_chol
from .posterior import PosteriorSamples

logger = logging.getLogger(__name__)

LOG_SQRT_2_OVER_PI = 0.5 * np.log(2.0 / np.pi)


@dataclass
class FitConfig:
    """Sampler settings.

    ``n_chains`` must be at least 2 so that split R-hat is defined.
    """

    n_chains: int = 4
    n_warmup: int = 2000
    n_draws: int = 2000
    seed: int = 0
    target_accept: float = 0.3
    model_kind: str = "multivariate"
    hyperprior: HyperpriorConfig | None = None
    hyper_substeps: int = 3
    thin: int = 1
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_chains < 2:
            raise ConfigError("n_chains must be at least 2")
        if self.n_draws < 1 or self.n_warmup < 0 or self.thin < 1:
            raise ConfigError("n_draws >= 1, n_warmup >= 0 and thin >= 1 required")
        if not 0 < self.target_accept < 1:
            raise ConfigError("target_accept must lie in (0, 1)")
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {MODEL_KINDS}")


# ---------------------------------------------------------------------------
# Proposal adaptation
# ---------------------------------------------------------------------------


def _window_ends(n_warmup: int, first: int = 100) -> list[int]:
    ends, start, length = [], 0, first
    while start + length <= 0.85 * n_warmup:
        ends.append(start + length)
        start += length
        length *= 2
    return ends


class AdaptiveBlock:
    """Batched Gaussian random-walk proposal with warmup adaptation.

    Each of ``n_batch`` independent blocks of dimension ``dim`` proposes
    ``x + exp(log_scale) * chol @ eps``.  During warmup ``log_scale`` follows
    a Robbins-Monro recursion towards ``target`` acceptance and ``chol`` is
    refreshed from the empirical covariance of expanding windows.
    """

    def __init__(self, n_batch, dim, init_sd, target=0.3, n_warmup=0):
        init_sd = np.broadcast_to(np.asarray(init_sd, float), (n_batch, dim))
        self.n_batch, self.dim, self.target = n_batch, dim, target
        self.chol = np.zeros((n_batch, dim, dim))
        idx = np.arange(dim)
        self.chol[:, idx, idx] = init_sd
        self.log_scale = np.zeros(n_batch)
        self._t = 0
        self._windows = _window_ends(n_warmup)
        self._seen = 0
        self._reset_window()
        self.n_proposed = 0
        self.n_accepted = np.zeros(n_batch)

    def _reset_window(self):
        self._wn = 0
        self._wsum = np.zeros((self.n_batch, self.dim))
        self._wouter = np.zeros((self.n_batch, self.dim, self.dim))

    def propose(self, x, rng):
        eps = rng.standard_normal(x.shape)
        step = np.einsum("bij,bj->bi", self.chol, eps)
        return x + np.exp(self.log_scale)[:, None] * step

    def record(self, accepted):
        self.n_proposed += 1
        self.n_accepted += accepted

    def reset_counts(self):
        self.n_proposed = 0
        self.n_accepted = np.zeros(self.n_batch)

    def adapt(self, x, accepted):
        self._t += 1
        gamma = min(1.0, 2.0 * self._t ** -0.6)
        self.log_scale += gamma * (accepted.astype(float) - self.target)
        self._seen += 1
        self._wn += 1
        self._wsum += x
        self._wouter += x[:, :, None] * x[:, None, :]
        if self._windows and self._seen >= self._windows[0]:
            self._windows.pop(0)
            self._refresh()
            self._reset_window()

    def _refresh(self):
        n = self._wn
        if n < 2 * self.dim + 2:
            return
        mean = self._wsum / n
        emp = (self._wouter - n * mean[:, :, None] * mean[:, None, :]) / (n - 1)
        d = np.arange(self.dim)
        diag = emp[:, d, d]
        shrunk = (n / (n + 5.0)) * emp
        shrunk[:, d, d] = diag
        for b in range(self.n_batch):
            if np.all(diag[b] > 1e-300):
                try:
                    c = np.linalg.cholesky(shrunk[b] + 1e-10 * np.diag(diag[b]))
                except np.linalg.LinAlgError:
                    continue
                self.chol[b] = c
                self.log_scale[b] = np.log(2.38 / np.sqrt(self.dim))
        self._t = 0


def metropolis_update(block: AdaptiveBlock, x, logp_cur, logp_fn, rng, adapt=False):
    """One batched random-walk Metropolis update.

    ``logp_fn`` maps proposals of shape (B, d) to log targets of shape (B,)
    (``-inf`` outside the support).  Returns ``(x_new, logp_new, accepted, extra)``
    where ``extra`` is whatever ``logp_fn`` returned as its second value.
    """
    prop = block.propose(x, rng)
    logp_prop, extra = logp_fn(prop)
    with np.errstate(invalid="ignore"):
        log_ratio = logp_prop - logp_cur
    accepted = np.log(rng.uniform(size=x.shape[0])) < np.where(
        np.isfinite(logp_prop), log_ratio, -np.inf
    )
    x_new = np.where(accepted[:, None], prop, x)
    logp_new = np.where(accepted, logp_prop, logp_cur)
    block.record(accepted)
    if adapt:
        block.adapt(x_new, accepted)
    return x_new, logp_new, accepted, extra


# ---------------------------------------------------------------------------
# Transforms for bounded hyperparameters
# ---------------------------------------------------------------------------


def _logit_to_range(u, a, b):
    """``a + (b-a) * sigmoid(u)`` and its log derivative."""
    sig = 0.5 * (1.0 + np.tanh(0.5 * u))
    log_jac = np.log(b - a) - np.logaddexp(0.0, u) - np.logaddexp(0.0, -u)
    return a + (b - a) * sig, log_jac


def _inside(x, a, b):
    """Strictly inside ``(a, b)``; the logistic map saturates in floating point."""
    return (x > a) & (x < b)


def _range_to_logit(x, a, b):
    p = np.clip((x - a) / (b - a), 1e-12, 1 - 1e-12)
    return np.log(p) - np.log1p(-p)


# ---------------------------------------------------------------------------
# Chain
# ---------------------------------------------------------------------------


class ChainSampler:
    """State, caches and proposal blocks of one chain."""

    def __init__(self, data: ModelData, config: FitConfig, rng, init: State | None = None):
        self.data = data
        self.config = config
        self.hp = (config.hyperprior or HyperpriorConfig(n_indicators=data.n_indicators)).strict()
        if self.hp.n_indicators != data.n_indicators:
            raise ConfigError("hyperprior indicator count does not match the data")
        self.rng = rng
        self.multivariate = config.model_kind == "multivariate" and data.n_indicators > 1
        self.eta = self.hp.eta
        state = init if init is not None else initial_state(data, self.hp, rng)
        self._load_state(state)
        self._build_blocks()

    # -- state -------------------------------------------------------------
    def _load_state(self, state: State):
        d = self.data
        nq = d.n_indicators
        self.mu = state.mu.astype(float).copy()
        self.log_sigma = np.log(state.sigma)
        if self.multivariate:
            self.y = corr_to_unconstrained(state.corr)
        else:
            self.y = np.zeros((d.n_segments, n_offdiag(nq)))
        _, self.corr_chol, self.y_logjac = unconstrained_to_corr(self.y)
        if not self.multivariate:
            self.corr_chol = np.broadcast_to(np.eye(nq), (d.n_segments, nq, nq)).copy()
            self.y_logjac = np.zeros(d.n_segments)
        self.log_zplus = np.log(state.zplus) if d.n_events else np.zeros((0, nq))
        h = state.hyper
        hp = self.hp
        self.u_mu = _range_to_logit(h.s_mu, hp.a_mu, hp.b_mu)[:, None]
        self.u_sigma = _range_to_logit(h.s_sigma, hp.a_sigma, hp.b_sigma)[:, None]
        self.u_z = np.column_stack([np.log(h.m_z), _range_to_logit(h.s_z, hp.a_z, hp.b_z)])
        self._refresh_caches()

    def _refresh_caches(self):
        self.sigma = np.exp(self.log_sigma)
        self.zplus = np.exp(self.log_zplus)
        self.s_mu = _logit_to_range(self.u_mu[:, 0], self.hp.a_mu, self.hp.b_mu)[0]
        self.s_sigma = _logit_to_range(self.u_sigma[:, 0], self.hp.a_sigma, self.hp.b_sigma)[0]
        self.m_z = np.exp(self.u_z[:, 0])
        self.s_z = _logit_to_range(self.u_z[:, 1], self.hp.a_z, self.hp.b_z)[0]
        chol = batched_covariance_chol(self.sigma, self.corr_chol)
        self.dens = self.data.interval_logdens(self.mu, chol, self.zplus)
        self.ll = self.dens.sum(axis=1)

    def state(self) -> State:
        corr = self.corr_chol @ np.swapaxes(self.corr_chol, -1, -2)
        idx = np.arange(self.data.n_indicators)
        corr[:, idx, idx] = 1.0
        return State(
            self.mu.copy(), self.sigma.copy(), corr, self.zplus.copy(),
            Hyperparams(self.s_mu.copy(), self.s_sigma.copy(), self.m_z.copy(),
                        self.s_z.copy(), self.eta),
        )

    def _build_blocks(self):
        d, cfg = self.data, self.config
        nq, tgt, nw = d.n_indicators, cfg.target_accept, cfg.n_warmup
        span = np.maximum(np.where(d.valid, d.dt, 0.0).sum(axis=1), 1.0)
        n_int = np.maximum(d.n_valid, 1)
        mu_sd = self.sigma / np.sqrt(span)[:, None]
        self.blocks = {
            "mu": AdaptiveBlock(d.n_segments, nq, mu_sd, tgt, nw),
            "sigma": AdaptiveBlock(
                d.n_segments, nq, (1.0 / np.sqrt(2.0 * n_int))[:, None], tgt, nw),
        }
        if self.multivariate:
            self.blocks["corr"] = AdaptiveBlock(
                d.n_segments, n_offdiag(nq), (0.5 / np.sqrt(n_int))[:, None], tgt, nw)
        if d.n_events:
            ev_scale = d.scale[d.event_seg, d.event_pos]
            sd = self.sigma[d.event_seg] * np.sqrt(ev_scale)[:, None] / np.maximum(self.zplus, 1e-3)
            self.blocks["zplus"] = AdaptiveBlock(d.n_events, nq, np.minimum(sd, 1.0), tgt, nw)
            # joint moves of (m_z, s_z) with all post-tamping states of one indicator
            self.blocks["zplus_group"] = AdaptiveBlock(nq, 2, [0.3, 0.1], tgt, nw)
        nh = nw * cfg.hyper_substeps
        self.blocks["hyper_mu"] = AdaptiveBlock(nq, 1, 0.5, tgt, nh)
        self.blocks["hyper_sigma"] = AdaptiveBlock(nq, 1, 0.5, tgt, nh)
        self.blocks["hyper_z"] = AdaptiveBlock(nq, 2, 0.3, tgt, nh)

    # -- conditional targets ------------------------------------------------
    def _hn_rows(self, x, scale):
        """Per-row sums of half-normal log densities; -inf if any x < 0."""
        val = LOG_SQRT_2_OVER_PI - np.log(scale)[None, :] - 0.5 * (x / scale[None, :]) ** 2
        out = val.sum(axis=1)
        return np.where(np.all(x >= 0, axis=1), out, -np.inf)

    def _ll_for(self, mu, sigma, corr_chol, zplus):
        chol = batched_covariance_chol(sigma, corr_chol)
        dens = self.data.interval_logdens(mu, chol, zplus)
        return dens.sum(axis=1), dens

    def _shifted_zplus(self, mu):
        """Post-tamping states moved so that maintained-interval residuals stay fixed."""
        d = self.data
        es, ep = d.event_seg, d.event_pos
        return self.zplus - (mu[es] - self.mu[es]) * d.scale[es, ep][:, None]

    def _zplus_prior_rows(self, zplus):
        """Per-segment sums of log-normal densities of the post-tamping states."""
        out = np.zeros(self.data.n_segments)
        if self.data.n_events:
            with np.errstate(divide="ignore", invalid="ignore"):
                logz = np.log(zplus)
                val = self._zplus_prior(logz) - logz.sum(axis=1)
            np.add.at(out, self.data.event_seg, np.where(np.isfinite(val), val, -np.inf))
        return out

    def update_mu(self, adapt):
        """Drift update; post-tamping states of the segment move with the drift.

        A maintained interval pins ``z+ + mu dt/2``, so when the noise is small
        a drift proposal that leaves ``z+`` fixed is almost always rejected.
        Shifting ``z+`` by ``-delta dt/2`` keeps that sum; the shift has unit
        Jacobian in ``z+``, so the log-normal prior enters on the natural scale.
        """
        holder = {}

        def target(mu):
            zp = self._shifted_zplus(mu) if self.data.n_events else self.zplus
            holder["zplus"] = zp
            ll, dens = self._ll_for(mu, self.sigma, self.corr_chol, np.maximum(zp, 1e-300))
            return ll + self._hn_rows(mu, self.s_mu) + self._zplus_prior_rows(zp), dens

        cur = self.ll + self._hn_rows(self.mu, self.s_mu) + self._zplus_prior_rows(self.zplus)
        self.mu, _, acc, dens = metropolis_update(
            self.blocks["mu"], self.mu, cur, target, self.rng, adapt)
        if self.data.n_events:
            moved = acc[self.data.event_seg]
            self.zplus = np.where(moved[:, None], holder["zplus"], self.zplus)
            self.log_zplus = np.log(self.zplus)
        self._accept_rows(acc, dens)

    def update_sigma(self, adapt):
        def target(ls):
            sig = np.exp(ls)
            ll, dens = self._ll_for(self.mu, sig, self.corr_chol, self.zplus)
            return ll + self._hn_rows(sig, self.s_sigma) + ls.sum(axis=1), dens

        cur = self.ll + self._hn_rows(self.sigma, self.s_sigma) + self.log_sigma.sum(axis=1)
        self.log_sigma, _, acc, dens = metropolis_update(
            self.blocks["sigma"], self.log_sigma, cur, target, self.rng, adapt)
        self.sigma = np.exp(self.log_sigma)
        self._accept_rows(acc, dens)

    def _lkj_term(self, chol, log_jac):
        with np.errstate(divide="ignore", invalid="ignore"):
            logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
            val = (self.eta - 1.0) * logdet + log_jac
        return np.where(np.isfinite(val), val, -np.inf)

    def update_corr(self, adapt):
        holder = {}

        def target(y):
            with np.errstate(divide="ignore", invalid="ignore"):
                _, cchol, ljac = unconstrained_to_corr(y)
            prior = self._lkj_term(cchol, ljac)
            safe = np.where(np.isfinite(prior)[:, None, None], cchol, self.corr_chol)
            ll, dens = self._ll_for(self.mu, self.sigma, safe, self.zplus)
            holder["chol"], holder["ljac"] = safe, ljac
            return ll + prior, dens

        cur = self.ll + self._lkj_term(self.corr_chol, self.y_logjac)
        self.y, _, acc, dens = metropolis_update(
            self.blocks["corr"], self.y, cur, target, self.rng, adapt)
        self.corr_chol = np.where(acc[:, None, None], holder["chol"], self.corr_chol)
        self.y_logjac = np.where(acc, holder["ljac"], self.y_logjac)
        self._accept_rows(acc, dens)

    def _zplus_prior(self, logz):
        # log-normal density of exp(logz) plus log-Jacobian: Normal(logz; m_z, s_z)
        m = self.m_z[None, :]
        s = self.s_z[None, :]
        return np.sum(-np.log(s) - 0.5 * ((logz - m) / s) ** 2, axis=1)

    def update_zplus(self, adapt):
        d = self.data
        es, ep = d.event_seg, d.event_pos

        def target(logz):
            ll, dens = self._ll_for(self.mu, self.sigma, self.corr_chol, np.exp(logz))
            return dens[es, ep] + self._zplus_prior(logz), dens

        cur = self.dens[es, ep] + self._zplus_prior(self.log_zplus)
        self.log_zplus, _, acc, dens = metropolis_update(
            self.blocks["zplus"], self.log_zplus, cur, target, self.rng, adapt)
        self.zplus = np.exp(self.log_zplus)
        take = np.zeros_like(self.dens, dtype=bool)
        take[es[acc], ep[acc]] = True
        self.dens = np.where(take, dens, self.dens)
        self.ll = self.dens.sum(axis=1)

    def update_zplus_group(self, adapt):
        """Shift and rescale the log post-tamping states together with ``(m_z, s_z)``.

        For indicator ``q`` the move maps ``log z+ -> m' + (s'/s)(log z+ - m)``.
        Its Jacobian ``(s'/s)^E`` cancels the change in the log-normal
        normaliser, so only the interval likelihood and the hyperpriors on
        ``m_z`` and ``s_z`` enter the acceptance ratio.  This removes the
        funnel between ``s_z`` and the states that single-site updates
        traverse slowly when events are few.
        """
        d, hp = self.data, self.hp
        es, ep = d.event_seg, d.event_pos
        block = self.blocks["zplus_group"]
        x = np.column_stack([self.u_z[:, 1], self.m_z])
        prop = block.propose(x, self.rng)
        chol = batched_covariance_chol(self.sigma, self.corr_chol)
        accepted = np.zeros(d.n_indicators, dtype=bool)

        def hyper_logp(q, u_s, m):
            a, b = hp.a_z[q], hp.b_z[q]
            s, ljac = _logit_to_range(u_s, a, b)
            if not (_inside(s, a, b) and m > 0):
                return -np.inf, s
            return float(ljac - np.log(m) - 0.5 * ((np.log(m) - hp.M_z[q]) / hp.S_z[q]) ** 2), s

        for q in range(d.n_indicators):
            lp_new, s_new = hyper_logp(q, *prop[q])
            if not np.isfinite(lp_new):
                continue
            lp_cur, s_cur = hyper_logp(q, *x[q])
            logz = self.log_zplus.copy()
            logz[:, q] = prop[q, 1] + (s_new / s_cur) * (logz[:, q] - x[q, 1])
            with np.errstate(over="ignore"):
                dens_new = d.event_logdens(self.mu, chol, np.exp(logz))
            log_ratio = dens_new.sum() - self.dens[es, ep].sum() + lp_new - lp_cur
            if np.isfinite(log_ratio) and np.log(self.rng.uniform()) < log_ratio:
                accepted[q] = True
                self.log_zplus = logz
                self.dens[es, ep] = dens_new
                x[q] = prop[q]
        block.record(accepted)
        if adapt:
            block.adapt(x, accepted)
        self.zplus = np.exp(self.log_zplus)
        self.ll = self.dens.sum(axis=1)
        self.u_z[:, 1] = x[:, 0]
        self.u_z[:, 0] = np.log(x[:, 1])
        self.m_z = x[:, 1].copy()
        self.s_z = _logit_to_range(self.u_z[:, 1], hp.a_z, hp.b_z)[0]

    def _accept_rows(self, acc, dens):
        self.dens = np.where(acc[:, None], dens, self.dens)
        self.ll = np.where(acc, dens.sum(axis=1), self.ll)

    def update_hyper(self, adapt):
        hp = self.hp
        mu, sig = self.mu, self.sigma
        sum_mu2 = np.sum(mu ** 2, axis=0)
        sum_sig2 = np.sum(sig ** 2, axis=0)
        n_seg = self.data.n_segments

        def scale_target(u, a, b, sumsq):
            s, ljac = _logit_to_range(u[:, 0], a, b)
            with np.errstate(divide="ignore", invalid="ignore"):
                val = -n_seg * np.log(s) - 0.5 * sumsq / s ** 2 + ljac
            return np.where(_inside(s, a, b), val, -np.inf), None

        cur = scale_target(self.u_mu, hp.a_mu, hp.b_mu, sum_mu2)[0]
        self.u_mu, _, _, _ = metropolis_update(
            self.blocks["hyper_mu"], self.u_mu, cur,
            lambda u: scale_target(u, hp.a_mu, hp.b_mu, sum_mu2), self.rng, adapt)
        cur = scale_target(self.u_sigma, hp.a_sigma, hp.b_sigma, sum_sig2)[0]
        self.u_sigma, _, _, _ = metropolis_update(
            self.blocks["hyper_sigma"], self.u_sigma, cur,
            lambda u: scale_target(u, hp.a_sigma, hp.b_sigma, sum_sig2), self.rng, adapt)

        logz = self.log_zplus
        n_ev = logz.shape[0]

        def z_target(u):
            log_m = u[:, 0]
            s, ljac = _logit_to_range(u[:, 1], hp.a_z, hp.b_z)
            m = np.exp(log_m)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                lik = -n_ev * np.log(s) - 0.5 * np.sum((logz - m[None, :]) ** 2, axis=0) / s ** 2
            # LogNorm(M, S) hyperprior on m, evaluated in log m (Jacobian cancels 1/m)
            prior = -0.5 * ((log_m - hp.M_z) / hp.S_z) ** 2
            ok = _inside(s, hp.a_z, hp.b_z) & (m > 0) & np.isfinite(m)
            return np.where(ok, lik + prior + ljac, -np.inf), None

        cur = z_target(self.u_z)[0]
        self.u_z, _, _, _ = metropolis_update(
            self.blocks["hyper_z"], self.u_z, cur, z_target, self.rng, adapt)
        self.s_mu = _logit_to_range(self.u_mu[:, 0], hp.a_mu, hp.b_mu)[0]
        self.s_sigma = _logit_to_range(self.u_sigma[:, 0], hp.a_sigma, hp.b_sigma)[0]
        self.m_z = np.exp(self.u_z[:, 0])
        self.s_z = _logit_to_range(self.u_z[:, 1], hp.a_z, hp.b_z)[0]

    def sweep(self, adapt: bool = False):
        self.update_mu(adapt)
        self.update_sigma(adapt)
        if self.multivariate:
            self.update_corr(adapt)
        if self.data.n_events:
            self.update_zplus(adapt)
            self.update_zplus_group(adapt)
        for _ in range(self.config.hyper_substeps):
            self.update_hyper(adapt)

    def acceptance(self) -> dict[str, float]:
        return {
            name: float(b.n_accepted.mean() / max(b.n_proposed, 1))
            for name, b in self.blocks.items()
        }


def step(sampler: ChainSampler, adapt: bool = False):
    """Advance a chain by one sweep; returns ``(state, acceptance-so-far)``."""
    sampler.sweep(adapt)
    return sampler.state(), sampler.acceptance()


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------


def moment_estimates(data: ModelData):
    """Per-segment drift and marginal sd from ordinary increments."""
    ordinary = data.valid & ~data.maint
    w = ordinary[..., None]
    tot_dt = np.where(ordinary, data.dt, 0.0).sum(axis=1)
    tot_dz = np.where(w, data.dz, 0.0).sum(axis=1)
    pooled_mu = tot_dz.sum(axis=0) / max(tot_dt.sum(), 1e-12)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        mu = np.where(tot_dt[:, None] > 0, tot_dz / tot_dt[:, None], pooled_mu[None, :])
        resid2 = np.where(w, (data.dz - mu[:, None, :] * data.dt[..., None]) ** 2 / data.dt[..., None], 0.0)
    n = ordinary.sum(axis=1)
    pooled_var = resid2.sum(axis=(0, 1)) / max(n.sum(), 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(n[:, None] > 1, resid2.sum(axis=1) / np.maximum(n[:, None], 1), pooled_var[None, :])
    sd = np.sqrt(np.where(var > 0, var, np.nan))
    fallback = np.nanmedian(sd) if np.any(np.isfinite(sd)) else 1.0
    sd = np.where(np.isfinite(sd) & (sd > 0), sd, fallback)
    return mu, sd


def initial_state(data: ModelData, hp: HyperpriorConfig, rng=None, jitter: float = 0.0) -> State:
    """Method-of-moments start; post-tamping states at the observed values."""
    mu, sd = moment_estimates(data)
    mu = np.where(mu > 0, mu, 0.1 * np.abs(mu) + 1e-6)
    nq = data.n_indicators
    corr = np.broadcast_to(np.eye(nq), (data.n_segments, nq, nq)).copy()
    if data.n_events:
        zplus = np.maximum(data.zend[data.event_seg, data.event_pos], 1e-2)
    else:
        zplus = np.zeros((0, nq))
    hyper = hp.medians()
    if jitter and rng is not None:
        mu = mu * np.exp(jitter * rng.standard_normal(mu.shape))
        sd = sd * np.exp(jitter * rng.standard_normal(sd.shape))
        if data.n_events:
            zplus = zplus * np.exp(jitter * rng.standard_normal(zplus.shape))
    return State(mu, sd, corr, zplus, hyper)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def _run_chain(data: ModelData, config: FitConfig, seed_seq, chain: int):
    rng = np.random.default_rng(seed_seq)
    hp = (config.hyperprior or HyperpriorConfig(n_indicators=data.n_indicators)).strict()
    init = initial_state(data, hp, rng, jitter=0.1)
    sampler = ChainSampler(data, config, rng, init)
    bad = np.flatnonzero(~np.isfinite(sampler.ll))
    if bad.size:
        sid = int(data.segment_ids[bad[0]])
        raise InitializationError(
            f"non-finite initial log-likelihood for segment {sid}", segment_id=sid)
    for _ in range(config.n_warmup):
        sampler.sweep(adapt=True)
    for b in sampler.blocks.values():
        b.reset_counts()
    n, nq, ns, ne = config.n_draws, data.n_indicators, data.n_segments, data.n_events
    out = {
        "mu": np.empty((n, ns, nq)), "sigma": np.empty((n, ns, nq)),
        "corr": np.empty((n, ns, nq, nq)), "zplus": np.empty((n, ne, nq)),
        "s_mu": np.empty((n, nq)), "s_sigma": np.empty((n, nq)),
        "m_z": np.empty((n, nq)), "s_z": np.empty((n, nq)),
    }
    for t in range(n):
        for _ in range(config.thin):
            sampler.sweep(adapt=False)
        st = sampler.state()
        out["mu"][t], out["sigma"][t], out["corr"][t] = st.mu, st.sigma, st.corr
        out["zplus"][t] = st.zplus
        out["s_mu"][t], out["s_sigma"][t] = st.hyper.s_mu, st.hyper.s_sigma
        out["m_z"][t], out["s_z"][t] = st.hyper.m_z, st.hyper.s_z
    logger.debug("chain %d acceptance %s", chain, sampler.acceptance())
    return out, sampler.acceptance()


def fit(dataset, config: FitConfig | None = None) -> PosteriorSamples:
    """Sample the hierarchical posterior of a collection of segment series.

    Parameters
    ----------
    dataset : sequence of SegmentSeries
        Maintenance flags should already be assigned; unflagged series are
        treated as maintenance-free.
    config : FitConfig, optional

    Returns
    -------
    PosteriorSamples
    """
    config = config or FitConfig()
    data = dataset if isinstance(dataset, ModelData) else ModelData(list(dataset))
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    args = [(data, config, seeds[c], c) for c in range(config.n_chains)]
    if config.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(lambda a: _run_chain(*a), args))
    else:
        results = [_run_chain(*a) for a in args]
    stacked = {k: np.stack([r[0][k] for r in results]) for k in results[0][0]}
    accept = {
        name: np.array([r[1][name] for r in results]) for name in results[0][1]
    }
    hp = config.hyperprior
    return PosteriorSamples(
        data.segment_ids, data.labels, config.model_kind,
        stacked["mu"], stacked["sigma"], stacked["corr"], stacked["zplus"],
        data.event_keys(), stacked["s_mu"], stacked["s_sigma"], stacked["m_z"],
        stacked["s_z"], eta=hp.eta if hp else 1.0, accept_rates=accept,
    )
