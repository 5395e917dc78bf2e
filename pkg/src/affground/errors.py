"""Exception types shared across the package.

CLI exit codes: InputError and its subclasses map to 2, NumericError to 3.
"""


class AffgroundError(Exception):
    """Base class for all package errors."""


class InputError(AffgroundError):
    """Caller handed us something malformed (bad value, bad path, bad label)."""


class DimensionMismatch(InputError):
    """Array shapes are incompatible for the requested operation."""


class DataError(InputError):
    """On-disk data is missing, truncated, or inconsistent with its manifest."""


class ConfigError(InputError):
    """Configuration values are invalid or inconsistent."""


class DegeneratePrototype(AffgroundError):
    """A pooled feature vector had near-zero norm and cannot be normalized.

    Callers treat the originating instance as unreliable instead of letting
    NaNs propagate.
    """


class NumericError(AffgroundError):
    """Non-finite values reached a place that must stay finite."""
