"""Heatmap calibration and the three evaluation metrics.

Predictions and ground truth are plain [H, W] arrays. KLD and SIM treat maps
as mass distributions (sum-normalized), NSS as a signal to standardize, so
their degenerate cases differ and are documented per function.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import ConfigError, InputError

KLD_EPS = 1e-12
NSS_FIXATION_THRESH = 0.1


def calibrate(cam: np.ndarray, affinity, gamma: float) -> np.ndarray:
    """Zero the CAM outside the binarized object affinity.

    Binarization is strict (> gamma), so calibration is idempotent and never
    raises a pixel's value. An all-zero result is returned as-is; the metrics
    own the degenerate-prediction conventions.
    """
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")
    cam = np.asarray(cam, dtype=np.float64)
    amap = np.asarray(getattr(affinity, "map", affinity), dtype=np.float64)
    if cam.shape != amap.shape:
        raise InputError(f"cam shape {cam.shape} vs affinity {amap.shape}")
    return cam * ops.binarize(amap, gamma)


def _as_mass(a: np.ndarray, name: str, required: bool) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise InputError(f"{name} must be [H, W], got {a.shape}")
    if (a < 0).any():
        raise InputError(f"{name} has negative entries")
    total = a.sum()
    if total <= 0.0:
        if required:
            raise InputError(f"{name} has zero mass")
        return a
    return a / total


def kld(pred: np.ndarray, gt: np.ndarray, eps: float = KLD_EPS) -> float:
    """Divergence from the ground-truth distribution to the prediction.

    Both maps are sum-normalized. Zero ground-truth pixels contribute 0; a
    zero-mass ground truth is an input error. A zero-mass prediction is
    allowed and yields a large finite value via the eps floor.
    """
    p = _as_mass(pred, "pred", required=False)
    g = _as_mass(gt, "gt", required=True)
    if p.shape != g.shape:
        raise InputError(f"shape mismatch {p.shape} vs {g.shape}")
    support = g > 0
    return float((g[support] * (np.log(g[support]) - np.log(p[support] + eps))).sum())


def sim(pred: np.ndarray, gt: np.ndarray) -> float:
    """Histogram intersection of the two sum-normalized maps, in [0, 1]."""
    p = _as_mass(pred, "pred", required=True)
    g = _as_mass(gt, "gt", required=True)
    if p.shape != g.shape:
        raise InputError(f"shape mismatch {p.shape} vs {g.shape}")
    return float(np.minimum(p, g).sum())


def nss(pred: np.ndarray, gt: np.ndarray,
        fixation_thresh: float = NSS_FIXATION_THRESH) -> float:
    """Mean standardized prediction over ground-truth fixation pixels.

    Fixations are pixels of the min-max normalized ground truth above
    fixation_thresh. A constant prediction scores 0 by convention; a ground
    truth with no fixation pixel is an input error.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InputError(f"shape mismatch {pred.shape} vs {gt.shape}")
    fix = ops.minmax_normalize(gt) > fixation_thresh
    if not fix.any():
        raise InputError("ground truth has no fixation pixels")
    sd = float(pred.std())
    if sd == 0.0:
        return 0.0
    return float(((pred - pred.mean()) / sd)[fix].mean())


def resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample to (out_h, out_w) with the half-pixel-center
    convention; border samples clamp to the edge."""
    src = np.asarray(src, dtype=np.float64)
    if src.ndim != 2:
        raise InputError(f"expected [H, W], got {src.shape}")
    if out_h < 1 or out_w < 1:
        raise InputError("output size must be positive")
    h, w = src.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.int64)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def evaluate_instance(pred: np.ndarray, gt: np.ndarray,
                      kld_eps: float = KLD_EPS,
                      fixation_thresh: float = NSS_FIXATION_THRESH):
    """Metric triple for one instance, with the degenerate-prediction
    convention applied: an all-zero prediction keeps its (large) KLD but
    scores SIM 0 and NSS 0 instead of erroring, since a fully suppressed CAM
    is a legitimately terrible prediction, not malformed input. The ground
    truth is resized to the prediction grid first when shapes differ.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != pred.shape:
        gt = resize_bilinear(gt, pred.shape[0], pred.shape[1])
    k = kld(pred, gt, eps=kld_eps)
    if pred.sum() <= 0.0:
        return k, 0.0, 0.0
    return k, sim(pred, gt), nss(pred, gt, fixation_thresh=fixation_thresh)
