"""Exception hierarchy shared across the package."""


class CTStandardError(Exception):
    """Base class for all package errors."""


class FormatError(CTStandardError):
    """A binary file or byte buffer does not follow the expected layout."""


class ValidationError(CTStandardError, ValueError):
    """An argument violates a documented precondition or invariant."""


class ShapeError(ValidationError):
    """An array has the wrong dimensionality or size."""


class UnsupportedError(CTStandardError):
    """Valid input that uses a feature outside the supported subset."""


class TrainingError(CTStandardError):
    """Optimization produced non-finite losses or gradients."""


class SamplingError(CTStandardError):
    """Reverse diffusion produced a non-finite intermediate."""


class InvariantViolation(CTStandardError):
    """An internal contract (e.g. frozen parameters) was broken."""
