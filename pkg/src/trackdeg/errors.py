"""Exception hierarchy shared across the package."""


class TrackDegError(Exception):
    """Base class for all package errors."""


class DataError(TrackDegError, ValueError):
    """Input data violates a structural requirement."""


class EmptySeriesError(DataError):
    """A series has too few observations for the requested operation."""


class ModelSpecificationError(TrackDegError, ValueError):
    """Model inputs are inconsistent (e.g. a flagged interval lacks a reset state)."""


class DecompositionError(TrackDegError, ValueError):
    """A matrix that must be positive definite is not."""


class NumericError(TrackDegError, FloatingPointError):
    """A computation produced a non-finite value."""


class InitializationError(TrackDegError, RuntimeError):
    """The sampler could not find a finite starting log-posterior."""

    def __init__(self, message, segment_id=None):
        super().__init__(message)
        self.segment_id = segment_id


class ConvergenceError(TrackDegError, RuntimeError):
    """Posterior draws failed the R-hat gate."""


class ConfigError(TrackDegError, ValueError):
    """Configuration could not be parsed or validated."""
