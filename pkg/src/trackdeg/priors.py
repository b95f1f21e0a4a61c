"""Prior and hyperprior distributions of the hierarchical model.

Log-normal distributions are parameterised by the mean ``m`` and standard
deviation ``s`` of the underlying normal, so their median is ``exp(m)``.
Correlation matrices follow the LKJ distribution with density proportional
to ``det(R) ** (eta - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .core_model import check_correlation
from .errors import ConfigError

LOG_2PI = np.log(2.0 * np.pi)


def _check_scale(scale, name="scale"):
    scale = np.asarray(scale, dtype=float)
    if np.any(~np.isfinite(scale)) or np.any(scale <= 0):
        raise ValueError(f"{name} must be positive")
    return scale


def halfnormal_logpdf(x, scale):
    """Log density of HalfNormal(scale); ``-inf`` for negative ``x``."""
    scale = _check_scale(scale)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        val = 0.5 * np.log(2.0 / np.pi) - np.log(scale) - 0.5 * (x / scale) ** 2
    val = np.where(x >= 0, val, -np.inf)
    return val[()] if val.ndim == 0 else val


def halfnormal_sample(scale, seed=None, size=None):
    scale = _check_scale(scale)
    rng = np.random.default_rng(seed)
    return np.abs(rng.normal(0.0, scale, size=size))


def lognormal_logpdf(x, m, s):
    """Log density of LogNorm(m, s); ``-inf`` for ``x <= 0``."""
    s = _check_scale(s, "s")
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        lx = np.log(np.where(x > 0, x, 1.0))
        val = -lx - np.log(s) - 0.5 * LOG_2PI - 0.5 * ((lx - m) / s) ** 2
    val = np.where(x > 0, val, -np.inf)
    return val[()] if val.ndim == 0 else val


def lognormal_sample(m, s, seed=None, size=None):
    s = _check_scale(s, "s")
    rng = np.random.default_rng(seed)
    return np.exp(rng.normal(m, s, size=size))


def uniform_logpdf(x, a, b):
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(divide="ignore"):
        val = np.where((x > a) & (x < b), -np.log(b - a), -np.inf)
    return val[()] if val.ndim == 0 else val


# --------------------------------------------------------------------------
# LKJ correlation prior
# --------------------------------------------------------------------------


def lkj_log_normalizer(d: int, eta: float) -> float:
    """Log of the integral of ``det(R)**(eta-1)`` over d x d correlation matrices."""
    if d < 1:
        raise ValueError("dimension must be at least 1")
    if eta <= 0:
        raise ValueError("eta must be positive")
    if d == 1:
        return 0.0
    total = 0.0
    for k in range(1, d):
        b = eta + (d - k - 1) / 2.0
        total += (2.0 * eta - 2.0 + d - k) * (d - k) * np.log(2.0)
        total += (d - k) * special.betaln(b, b)
    return float(total)


def lkj_logpdf(r, eta: float) -> float:
    """Normalised LKJ(eta) log density of correlation matrix ``r``."""
    r = np.asarray(r, dtype=float)
    chol = check_correlation(r)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float((eta - 1.0) * logdet - lkj_log_normalizer(r.shape[0], eta))


def n_offdiag(d: int) -> int:
    return d * (d - 1) // 2


def cpc_to_cholesky(z):
    """Cholesky factor of a correlation matrix from canonical partial correlations.

    ``z`` has trailing dimension ``d(d-1)/2`` ordered row by row over the
    strict lower triangle; ``z[(i, j)]`` is the partial correlation of
    variables ``i`` and ``j`` given variables ``0..j-1``.  Leading dimensions
    are batch dimensions.

    Returns
    -------
    chol : ndarray, shape (..., d, d)
    log_jac : ndarray, shape (...)
        ``log |d vech(R) / d z|`` for the strict lower triangle of ``R = L L^T``.
    """
    z = np.asarray(z, dtype=float)
    p = z.shape[-1]
    d = int(round((1 + np.sqrt(1 + 8 * p)) / 2))
    if n_offdiag(d) != p:
        raise ValueError("trailing dimension is not a triangular number")
    batch = z.shape[:-1]
    chol = np.zeros(batch + (d, d))
    chol[..., 0, 0] = 1.0
    log_jac = np.zeros(batch)
    idx = 0
    for i in range(1, d):
        remaining = np.ones(batch)
        for j in range(i):
            # d L[i,j] / d z = sqrt(remaining)
            log_jac = log_jac + 0.5 * np.log(remaining)
            chol[..., i, j] = z[..., idx] * np.sqrt(remaining)
            remaining = remaining - chol[..., i, j] ** 2
            idx += 1
        chol[..., i, i] = np.sqrt(np.maximum(remaining, 0.0))
    # vech(R) from the free entries of L
    for k in range(1, d):
        log_jac = log_jac + (d - k - 1) * np.log(chol[..., k, k])
    return chol, log_jac


def cholesky_to_cpc(chol):
    """Inverse of :func:`cpc_to_cholesky`."""
    chol = np.asarray(chol, dtype=float)
    d = chol.shape[-1]
    batch = chol.shape[:-2]
    z = np.zeros(batch + (n_offdiag(d),))
    idx = 0
    for i in range(1, d):
        remaining = np.ones(batch)
        for j in range(i):
            z[..., idx] = chol[..., i, j] / np.sqrt(remaining)
            remaining = remaining - chol[..., i, j] ** 2
            idx += 1
    return z


def unconstrained_to_corr(y):
    """Map unconstrained coordinates to a correlation matrix.

    Partial correlations are ``tanh(y)``.  Returns ``(R, chol, log_jac)``
    where ``log_jac`` is the log Jacobian of ``y -> vech(R)``.
    """
    y = np.asarray(y, dtype=float)
    z = np.tanh(y)
    chol, log_jac = cpc_to_cholesky(z)
    # d tanh(y)/dy = 1 - tanh^2 = 4 / (e^y + e^-y)^2, stable form:
    log_dtanh = np.log(4.0) - 2.0 * np.logaddexp(y, -y)
    log_jac = log_jac + np.sum(log_dtanh, axis=-1)
    r = chol @ np.swapaxes(chol, -1, -2)
    d = r.shape[-1]
    r[..., np.arange(d), np.arange(d)] = 1.0
    return r, chol, log_jac


def corr_to_unconstrained(r):
    r = np.asarray(r, dtype=float)
    chol = np.linalg.cholesky(r)
    z = np.clip(cholesky_to_cpc(chol), -1 + 1e-15, 1 - 1e-15)
    return np.arctanh(z)


def lkj_sample(d: int, eta: float, seed=None, size=None):
    """Draw LKJ(eta) correlation matrices by the C-vine construction.

    The partial correlation of variables ``(i, j)`` given ``0..j-1`` is
    ``2*Beta(b, b) - 1`` with ``b = eta + (d - 2 - j)/2``.
    """
    if d < 2:
        raise ValueError("d must be at least 2")
    if eta <= 0:
        raise ValueError("eta must be positive")
    rng = np.random.default_rng(seed)
    batch = () if size is None else tuple(np.atleast_1d(size))
    z = np.empty(batch + (n_offdiag(d),))
    idx = 0
    for i in range(1, d):
        for j in range(i):
            b = eta + (d - 2 - j) / 2.0
            z[..., idx] = 2.0 * rng.beta(b, b, size=batch) - 1.0
            idx += 1
    chol, _ = cpc_to_cholesky(z)
    r = chol @ np.swapaxes(chol, -1, -2)
    r[..., np.arange(d), np.arange(d)] = 1.0
    return r


# --------------------------------------------------------------------------
# Hyperparameters
# --------------------------------------------------------------------------


@dataclass
class Hyperparams:
    """Global prior parameters, one entry per indicator (``eta`` is shared)."""

    s_mu: np.ndarray
    s_sigma: np.ndarray
    m_z: np.ndarray
    s_z: np.ndarray
    eta: float = 1.0

    def __post_init__(self):
        for name in ("s_mu", "s_sigma", "m_z", "s_z"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        n = self.s_mu.size
        if any(getattr(self, f).size != n for f in ("s_sigma", "m_z", "s_z")):
            raise ValueError("hyperparameter vectors must share a length")
        for name in ("s_mu", "s_sigma", "s_z"):
            if np.any(getattr(self, name) <= 0):
                raise ValueError(f"{name} must be positive")
        if not self.eta > 0:
            raise ValueError("eta must be positive")

    @property
    def n_indicators(self) -> int:
        return self.s_mu.size


def _per_q(value, n):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.repeat(arr, n)
    if arr.size != n:
        raise ConfigError(f"expected {n} values, got {arr.size}")
    return arr


@dataclass
class HyperpriorConfig:
    """Hyperprior ranges and parameters; defaults give the weakly informative set.

    Scalars are broadcast to every indicator.
    """

    n_indicators: int = 4
    a_mu: np.ndarray = 0.0
    b_mu: np.ndarray = 10.0
    a_sigma: np.ndarray = 0.0
    b_sigma: np.ndarray = 10.0
    M_z: np.ndarray = 2.3
    S_z: np.ndarray = 1.0
    a_z: np.ndarray = 0.0
    b_z: np.ndarray = 2.0
    eta: float = 1.0

    def __post_init__(self):
        n = int(self.n_indicators)
        if n < 1:
            raise ConfigError("n_indicators must be at least 1")
        for name in ("a_mu", "b_mu", "a_sigma", "b_sigma", "M_z", "S_z", "a_z", "b_z"):
            setattr(self, name, _per_q(getattr(self, name), n))
        for a, b in (("a_mu", "b_mu"), ("a_sigma", "b_sigma"), ("a_z", "b_z")):
            lo, hi = getattr(self, a), getattr(self, b)
            if np.any(lo > hi) or np.any(lo < 0):
                raise ConfigError(f"invalid range {a}..{b}")
        if np.any(self.S_z <= 0):
            raise ConfigError("S_z must be positive")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")

    def strict(self) -> "HyperpriorConfig":
        """Raise unless every uniform range is non-degenerate (needed for fitting)."""
        for a, b in (("a_mu", "b_mu"), ("a_sigma", "b_sigma"), ("a_z", "b_z")):
            if np.any(getattr(self, a) >= getattr(self, b)):
                raise ConfigError(f"range {a}..{b} must satisfy a < b for fitting")
        return self

    def logpdf(self, hyper: Hyperparams) -> float:
        """Joint hyperprior log density of ``hyper``."""
        total = np.sum(uniform_logpdf(hyper.s_mu, self.a_mu, self.b_mu))
        total += np.sum(uniform_logpdf(hyper.s_sigma, self.a_sigma, self.b_sigma))
        total += np.sum(lognormal_logpdf(hyper.m_z, self.M_z, self.S_z))
        total += np.sum(uniform_logpdf(hyper.s_z, self.a_z, self.b_z))
        return float(total)

    def medians(self) -> Hyperparams:
        return Hyperparams(
            s_mu=0.5 * (self.a_mu + self.b_mu),
            s_sigma=0.5 * (self.a_sigma + self.b_sigma),
            m_z=np.exp(self.M_z),
            s_z=0.5 * (self.a_z + self.b_z),
            eta=self.eta,
        )


def sample_hyperparams(config: HyperpriorConfig, seed=None) -> Hyperparams:
    """One draw of every hyperparameter from its hyperprior."""
    rng = np.random.default_rng(seed)
    n = config.n_indicators

    def unif(a, b):
        # point mass when a == b
        return a + (b - a) * rng.uniform(size=n)

    s_mu = unif(config.a_mu, config.b_mu)
    s_sigma = unif(config.a_sigma, config.b_sigma)
    m_z = np.exp(rng.normal(config.M_z, config.S_z))
    s_z = unif(config.a_z, config.b_z)
    # uniform(0, b) can return exactly 0 with vanishing probability
    tiny = np.finfo(float).tiny
    return Hyperparams(
        np.maximum(s_mu, tiny), np.maximum(s_sigma, tiny), m_z,
        np.maximum(s_z, tiny), config.eta,
    )


def lkj_corr_marginal_logpdf(r, d: int, eta: float):
    """Log density of one off-diagonal entry of an LKJ(eta) matrix of size d."""
    b = eta - 1.0 + d / 2.0
    return stats.beta.logpdf((np.asarray(r) + 1.0) / 2.0, b, b) - np.log(2.0)
