"""Exception types shared across the package."""

from __future__ import annotations


class GaclError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(GaclError, ValueError):
    """Array lengths or shapes do not line up."""


class DomainError(GaclError, ValueError):
    """A value lies outside the range an operation accepts."""


class TrainingError(GaclError, RuntimeError):
    """Training hit a non-finite gradient or an unusable dataset."""


class IngestionError(GaclError, ValueError):
    """An embedded CSV is missing or malformed."""
