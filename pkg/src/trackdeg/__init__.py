"""Multivariate Wiener degradation models for track-geometry indicators."""

from .core_model import (
    SegmentSeries,
    WienerParams,
    loglik_multivariate,
    loglik_univariate,
    simulate_path,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    TrackDegError,
)
from .ingest import RawInspection, SegmentationConfig, build_series, segmentize
from .maintenance_id import IdentificationConfig, identify
from .mcmc import FitConfig, PosteriorSamples, fit
from .predict import (
    HittingTimeResult,
    Thresholds,
    compare_models,
    hitting_time,
    predictive_bands,
    validate,
)
from .priors import HyperpriorConfig, Hyperparams, lkj_logpdf, lkj_sample
from .synthgen import ScenarioSpec, generate

__version__ = "0.1.0"
