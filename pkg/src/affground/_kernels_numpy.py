"""Pure-numpy builds of the hot kernels.

Semantics here are the reference; the numba twins in _kernels_numba.py must
match them (up to float summation order).
"""

from __future__ import annotations

import numpy as np


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-size 3x3 convolution with zero padding.

    x: [H, W, Din], w: [3, 3, Din, Dout], b: [Dout] -> [H, W, Dout]
    """
    H, W, Din = x.shape
    Dout = w.shape[3]
    xp = np.zeros((H + 2, W + 2, Din), dtype=x.dtype)
    xp[1:-1, 1:-1] = x
    cols = np.empty((H, W, 3, 3, Din), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            cols[:, :, u, v, :] = xp[u:u + H, v:v + W, :]
    y = cols.reshape(H * W, 9 * Din) @ w.reshape(9 * Din, Dout)
    return y.reshape(H, W, Dout) + b


def conv3x3_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    """Gradients of conv3x3_forward. Returns (dx, dw, db)."""
    H, W, Din = x.shape
    Dout = w.shape[3]
    xp = np.zeros((H + 2, W + 2, Din), dtype=x.dtype)
    xp[1:-1, 1:-1] = x
    cols = np.empty((H, W, 3, 3, Din), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            cols[:, :, u, v, :] = xp[u:u + H, v:v + W, :]
    dy2 = dy.reshape(H * W, Dout)
    dw = (cols.reshape(H * W, 9 * Din).T @ dy2).reshape(3, 3, Din, Dout)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ w.reshape(9 * Din, Dout).T).reshape(H, W, 3, 3, Din)
    dxp = np.zeros((H + 2, W + 2, Din), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            dxp[u:u + H, v:v + W, :] += dcols[:, :, u, v, :]
    return dxp[1:-1, 1:-1], dw, db


def kmeans_lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int, tol: float):
    """Lloyd iterations from given initial centroids.

    points: [N, D], centroids: [K, D] (copied). Ties in assignment go to the
    lowest centroid index; empty clusters keep their previous centroid.
    Returns (centroids, labels, n_iter).
    """
    cents = centroids.copy()
    K = cents.shape[0]
    labels = np.zeros(points.shape[0], dtype=np.int64)
    n_iter = 0
    for it in range(max_iter):
        n_iter = it + 1
        d2 = ((points[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        moved = 0.0
        for k in range(K):
            sel = points[labels == k]
            if sel.shape[0] == 0:
                continue
            new = sel.mean(axis=0)
            moved = max(moved, float(np.sqrt(((new - cents[k]) ** 2).sum())))
            cents[k] = new
        if moved <= tol:
            break
    return cents, labels, n_iter


def pairwise_contrast(zn: np.ndarray, n_pos: int, inv_tau: float):
    """Dense pairwise contrastive term over normalized pixel features.

    zn: [n_all, D] unit rows, rows [0, n_pos) form the positive set and act
    as anchors; every row is a candidate in the denominator. Returns
    (loss, d_loss/d_zn). Log-sum-exp is max-stabilized.
    """
    n = n_pos
    zp = zn[:n]
    s = (zp @ zn.T) * inv_tau  # [n, n_all]
    smax = s.max(axis=1, keepdims=True)
    ex = np.exp(s - smax)
    denom = ex.sum(axis=1, keepdims=True)
    lse = (smax + np.log(denom))[:, 0]
    loss = -(s[:, :n].sum() - n * lse.sum()) / (n * n)
    sigma = ex / denom
    g = sigma * (n / (n * n))
    g[:, :n] -= 1.0 / (n * n)
    g *= inv_tau
    dzn = g.T @ zp
    dzn[:n] += g @ zn
    return loss, dzn


def box_mean_valid(m: np.ndarray, k: int) -> np.ndarray:
    """k x k box mean where out-of-bounds neighbors are excluded from the
    average (zero padding with valid-count renormalization)."""
    H, W = m.shape
    r = k // 2
    integ = np.zeros((H + 1, W + 1), dtype=m.dtype)
    integ[1:, 1:] = m.cumsum(axis=0).cumsum(axis=1)
    i = np.arange(H)
    j = np.arange(W)
    i0 = np.clip(i - r, 0, H)[:, None]
    i1 = np.clip(i + r + 1, 0, H)[:, None]
    j0 = np.clip(j - r, 0, W)[None, :]
    j1 = np.clip(j + r + 1, 0, W)[None, :]
    total = integ[i1, j1] - integ[i0, j1] - integ[i1, j0] + integ[i0, j0]
    count = (i1 - i0) * (j1 - j0)
    return total / count
