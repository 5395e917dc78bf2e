"""Kernel backend selection.

Hot numeric kernels exist twice: a numba @njit build and a pure-numpy
fallback with identical semantics. The active backend is chosen once from
the AFFGROUND_BACKEND environment variable:

    AFFGROUND_BACKEND=numba   force numba (raises if numba cannot import)
    AFFGROUND_BACKEND=numpy   force the pure-numpy path
    unset / "auto"            numba when importable, numpy otherwise

`set_backend()` overrides the choice at runtime (used by tests and the
kernel benchmark).
"""

from __future__ import annotations

import os

from .errors import ConfigError

_VALID = ("auto", "numba", "numpy")
_choice: str | None = None


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def set_backend(name: str) -> None:
    global _choice
    if name not in _VALID:
        raise ConfigError(f"unknown backend {name!r}; expected one of {_VALID}")
    if name == "numba" and not _numba_available():
        raise ConfigError("backend 'numba' requested but numba is not importable")
    _choice = name


def get_backend() -> str:
    """Resolved backend name, either 'numba' or 'numpy'."""
    global _choice
    if _choice is None:
        env = os.environ.get("AFFGROUND_BACKEND", "auto").strip().lower()
        if env not in _VALID:
            raise ConfigError(
                f"AFFGROUND_BACKEND={env!r} not understood; expected one of {_VALID}"
            )
        _choice = env
    if _choice == "auto":
        return "numba" if _numba_available() else "numpy"
    return _choice
