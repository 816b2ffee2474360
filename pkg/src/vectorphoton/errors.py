"""Exception hierarchy shared by all pipeline stages."""


class VectorPhotonError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(VectorPhotonError, ValueError):
    """Inputs are inconsistent (grid mismatch, non-orthogonal arms, bad config)."""


class DegenerateInputError(VectorPhotonError, ValueError):
    """An input map or vector carries no usable signal (e.g. all-zero amplitude)."""


class HeraldImpossibleError(VectorPhotonError):
    """The requested trigger outcome has zero probability.

    Attributes
    ----------
    probability : float
        Always 0.0; kept so callers can log the heralding probability uniformly.
    """

    def __init__(self, message, probability=0.0):
        super().__init__(message)
        self.probability = probability


class DarkPixelError(VectorPhotonError):
    """No local two-photon state exists at a pixel (or region) without intensity."""


class IncompleteTomographyError(VectorPhotonError):
    """A six-analyzer tomography set is missing at least one image."""


class InsufficientResolutionError(VectorPhotonError):
    """A region map is too coarse for the requested analysis."""


class UnpolarizedRegionError(VectorPhotonError):
    """The polarized part of a region is below the usable threshold."""


class InsufficientDataError(VectorPhotonError):
    """A correlation estimate has no contributing photons."""


class StageError(VectorPhotonError):
    """A pipeline stage failed; ``stage`` names it and ``cause`` holds the original error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
