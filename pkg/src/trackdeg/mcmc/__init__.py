"""Hierarchical Bayesian fitting: posterior density, sampler, diagnostics."""

from . import diagnostics
from .model import ModelData, State, log_posterior
from .posterior import PosteriorSamples
from .sampler import FitConfig, fit

__all__ = [
    "FitConfig",
    "ModelData",
    "PosteriorSamples",
    "State",
    "diagnostics",
    "fit",
    "log_posterior",
]
