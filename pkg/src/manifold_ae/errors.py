"""Exception types shared across the package."""


class ManifoldAEError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ManifoldAEError):
    """Malformed or non-finite input (shape mismatch, NaN/Inf entries)."""


class InvalidConfigError(ManifoldAEError):
    """Configuration violates a precondition (e.g. d_m > d_u)."""


class InsufficientSamplesError(ManifoldAEError):
    """Too few samples for the requested statistic."""


class IntegrationDivergedError(ManifoldAEError):
    """A numerical integration produced non-finite state."""


class TrainingDivergedError(ManifoldAEError):
    """Training loss became non-finite; carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class DegenerateLatentError(ManifoldAEError):
    """Latent covariance has zero leading singular value."""


class AmbiguousSpectrumError(ManifoldAEError):
    """Spectrum has no trustworthy gap; caller must pass d_m explicitly."""


class NoUsableScaleError(ManifoldAEError):
    """Every neighborhood radius was skipped (too few neighbors)."""
