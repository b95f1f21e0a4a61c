"""Convergence diagnostics for multi-chain MCMC output."""

from __future__ import annotations

import numpy as np

from ..errors import DataError


def _as_chains(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DataError("draws must have shape (n_chains, n_draws)")
    if x.shape[0] < 2:
        raise DataError("at least two chains are required")
    if x.shape[1] < 4:
        raise DataError("at least four draws per chain are required")
    return x


def split_chains(x) -> np.ndarray:
    """Split every chain in half, dropping the middle draw for odd lengths."""
    x = np.asarray(x, dtype=float)
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, -half:]], axis=0)


def split_rhat(x) -> float:
    """Split potential scale reduction factor.

    Parameters
    ----------
    x : array_like, shape (n_chains, n_draws)

    Returns
    -------
    float
        1.0 for a parameter that is constant across all draws.
    """
    s = split_chains(_as_chains(x))
    m, n = s.shape
    means = s.mean(axis=1)
    w = s.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else np.inf
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def autocovariance(x) -> np.ndarray:
    """Biased autocovariance of a 1-D series via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n]
    return acov / n


def ess(x) -> float:
    """Effective sample size across split chains (Geyer initial monotone sequence)."""
    s = split_chains(_as_chains(x))
    m, n = s.shape
    acov = np.array([autocovariance(c) for c in s])
    chain_var = acov[:, 0] * n / (n - 1.0)
    w = chain_var.mean()
    var_plus = w * (n - 1.0) / n
    if m > 1:
        var_plus += s.mean(axis=1).var(ddof=1)
    if var_plus == 0:
        return float(m * n)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum consecutive pairs while positive, enforce monotonicity
    n_pairs = n // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    tau = -1.0
    prev = np.inf
    for p in pairs:
        if p <= 0:
            break
        p = min(p, prev)
        tau += 2.0 * p
        prev = p
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def summarize(draws: dict) -> dict[str, dict[str, float]]:
    """Split R-hat and ESS for every named scalar parameter."""
    return {
        name: {"split_rhat": split_rhat(x), "ess": ess(x)} for name, x in draws.items()
    }
