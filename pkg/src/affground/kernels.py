"""Backend-dispatched hot kernels.

Each wrapper resolves the active backend per call, so set_backend() (or the
AFFGROUND_BACKEND env var at import time) switches implementations without
reloading anything. The numba module is imported lazily to keep the numpy
path importable on machines without numba.
"""

from __future__ import annotations

import numpy as np

from . import _kernels_numpy as _np_impl
from .backend import get_backend

_nb_impl = None


def _impl():
    global _nb_impl
    if get_backend() == "numba":
        if _nb_impl is None:
            from . import _kernels_numba as _nb
            _nb_impl = _nb
        return _nb_impl
    return _np_impl


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _impl().conv3x3_forward(x, w, b)


def conv3x3_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    return _impl().conv3x3_backward(x, w, dy)


def kmeans_lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int, tol: float):
    return _impl().kmeans_lloyd(points, centroids, max_iter, tol)


def pairwise_contrast(zn: np.ndarray, n_pos: int, inv_tau: float):
    return _impl().pairwise_contrast(zn, n_pos, inv_tau)


def box_mean_valid(m: np.ndarray, k: int) -> np.ndarray:
    return _impl().box_mean_valid(m, k)
