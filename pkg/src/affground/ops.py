"""Small dense-tensor primitives shared across the pipeline.

Feature maps are [H, W, D] float64, masks and similarity maps [H, W].
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, DegeneratePrototype, DimensionMismatch, NumericError

NORM_EPS = 1e-8


def _as_map(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be [H, W], got shape {a.shape}")
    return a


def _as_feats(z, name: str) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise DimensionMismatch(f"{name} must be [H, W, D], got shape {z.shape}")
    return z


def broadcast_hadamard(feats: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Pixelwise product of a feature map with a spatial mask, broadcast over
    channels."""
    feats = _as_feats(feats, "feats")
    mask = _as_map(mask, "mask")
    if feats.shape[:2] != mask.shape:
        raise DimensionMismatch(
            f"mask shape {mask.shape} does not match feature grid {feats.shape[:2]}")
    return feats * mask[:, :, None]


def masked_pool(feats: np.ndarray, mask: np.ndarray, by_mass: bool = False) -> np.ndarray:
    """Mask-weighted spatial sum divided by the grid size H*W.

    The divisor is deliberately the full grid size, not the mask mass: the
    mask weights are meant to shape the pooled direction, and the later unit
    normalization absorbs the scale. With by_mass=True the sum is divided by
    the mask mass instead (a true weighted mean, kept for sensitivity runs);
    a mask with mass below NORM_EPS then raises DegeneratePrototype.
    """
    weighted = broadcast_hadamard(feats, mask)
    total = weighted.sum(axis=(0, 1))
    if by_mass:
        mass = float(np.asarray(mask, dtype=np.float64).sum())
        if mass < NORM_EPS:
            raise DegeneratePrototype(f"mask mass {mass:.3e} too small to pool by")
        return total / mass
    H, W = weighted.shape[:2]
    return total / (H * W)


def channel_normalize(vec: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Unit-normalize a channel vector; a norm below eps raises
    DegeneratePrototype so callers can demote the instance instead of
    propagating NaNs."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.ndim != 1:
        raise DimensionMismatch(f"expected a vector, got shape {vec.shape}")
    norm = float(np.sqrt((vec * vec).sum()))
    if norm < eps:
        raise DegeneratePrototype(f"vector norm {norm:.3e} below {eps:.0e}")
    return vec / norm


def pixelwise_normalize(feats: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Unit-normalize each pixel's channel vector.

    Unlike channel_normalize this clamps the divisor at eps instead of
    raising: all-zero pixels are legitimate (masked-out regions) and map to
    zero.
    """
    feats = _as_feats(feats, "feats")
    norms = np.sqrt((feats * feats).sum(axis=2, keepdims=True))
    return feats / np.maximum(norms, eps)


def minmax_normalize(a: np.ndarray) -> np.ndarray:
    """Rescale a map to [0, 1]. A constant map normalizes to all zeros."""
    a = _as_map(a, "map")
    if not np.isfinite(a).all():
        raise NumericError("non-finite values in map passed to minmax_normalize")
    lo = a.min()
    hi = a.max()
    if hi - lo <= 0.0:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def binarize(a: np.ndarray, thresh: float) -> np.ndarray:
    """Strict threshold: 1.0 where a > thresh, else 0.0. Ties fall to zero."""
    a = _as_map(a, "map")
    return (a > thresh).astype(np.float64)


def cosine_map(feats: np.ndarray, vec: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Per-pixel cosine similarity between a feature map and a single vector,
    on the raw [-1, 1] scale.

    Zero-norm pixels get cosine 0. A degenerate reference vector is a broken
    input (a corrupt embedding cache), not a numeric edge case.
    """
    feats = _as_feats(feats, "feats")
    vec = np.asarray(vec, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != feats.shape[2]:
        raise DimensionMismatch(
            f"reference vector shape {vec.shape} does not match channels {feats.shape[2]}")
    vnorm = float(np.sqrt((vec * vec).sum()))
    if vnorm < eps:
        raise DataError("reference vector has near-zero norm")
    pix = np.sqrt((feats * feats).sum(axis=2))
    return (feats @ (vec / vnorm)) / np.maximum(pix, eps)
