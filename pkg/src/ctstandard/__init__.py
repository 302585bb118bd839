"""Latent-diffusion CT image standardization and its evaluation toolkit."""

from .errors import (
    CTStandardError,
    FormatError,
    InvariantViolation,
    SamplingError,
    ShapeError,
    TrainingError,
    UnsupportedError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "CTStandardError",
    "FormatError",
    "InvariantViolation",
    "SamplingError",
    "ShapeError",
    "TrainingError",
    "UnsupportedError",
    "ValidationError",
]
