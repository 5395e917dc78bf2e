"""Weakly supervised affordance grounding from paired ego/exocentric views.

Frozen-backbone features go in through a cache container; out come trained
projection heads, calibrated affordance heatmaps and KLD/SIM/NSS tables.
"""

from .backend import get_backend, set_backend
from .config import RunConfig
from .errors import (
    AffgroundError,
    ConfigError,
    DataError,
    DegeneratePrototype,
    DimensionMismatch,
    InputError,
    NumericError,
)

__version__ = "0.1.0"

__all__ = [
    "AffgroundError",
    "ConfigError",
    "DataError",
    "DegeneratePrototype",
    "DimensionMismatch",
    "InputError",
    "NumericError",
    "RunConfig",
    "get_backend",
    "set_backend",
    "__version__",
]
