"""Numba builds of the hot kernels.

Only imported when the numba backend is selected, so the numba import here is
unconditional. All loops are serial: parallel reductions would reorder float
sums and break run-to-run determinism.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def conv3x3_forward(x, w, b):
    # innermost loop runs over the contiguous output axis of w and y
    H, W, Din = x.shape
    Dout = w.shape[3]
    y = np.empty((H, W, Dout), dtype=x.dtype)
    for i in range(H):
        for j in range(W):
            for o in range(Dout):
                y[i, j, o] = b[o]
            for u in range(3):
                ii = i + u - 1
                if ii < 0 or ii >= H:
                    continue
                for v in range(3):
                    jj = j + v - 1
                    if jj < 0 or jj >= W:
                        continue
                    for c in range(Din):
                        xv = x[ii, jj, c]
                        for o in range(Dout):
                            y[i, j, o] += xv * w[u, v, c, o]
    return y


@njit(cache=True)
def conv3x3_backward(x, w, dy):
    H, W, Din = x.shape
    Dout = w.shape[3]
    dx = np.zeros((H, W, Din), dtype=x.dtype)
    dw = np.zeros((3, 3, Din, Dout), dtype=x.dtype)
    db = np.zeros(Dout, dtype=x.dtype)
    for i in range(H):
        for j in range(W):
            for o in range(Dout):
                db[o] += dy[i, j, o]
            for u in range(3):
                ii = i + u - 1
                if ii < 0 or ii >= H:
                    continue
                for v in range(3):
                    jj = j + v - 1
                    if jj < 0 or jj >= W:
                        continue
                    for c in range(Din):
                        xv = x[ii, jj, c]
                        acc = 0.0
                        for o in range(Dout):
                            g = dy[i, j, o]
                            acc += g * w[u, v, c, o]
                            dw[u, v, c, o] += g * xv
                        dx[ii, jj, c] += acc
    return dx, dw, db


@njit(cache=True)
def kmeans_lloyd(points, centroids, max_iter, tol):
    N, D = points.shape
    K = centroids.shape[0]
    cents = centroids.copy()
    labels = np.zeros(N, dtype=np.int64)
    n_iter = 0
    for it in range(max_iter):
        n_iter = it + 1
        for n in range(N):
            best = 0
            bestd = np.inf
            for k in range(K):
                d = 0.0
                for c in range(D):
                    diff = points[n, c] - cents[k, c]
                    d += diff * diff
                if d < bestd:
                    bestd = d
                    best = k
            labels[n] = best
        moved = 0.0
        sums = np.zeros((K, D), dtype=points.dtype)
        counts = np.zeros(K, dtype=np.int64)
        for n in range(N):
            counts[labels[n]] += 1
            for c in range(D):
                sums[labels[n], c] += points[n, c]
        for k in range(K):
            if counts[k] == 0:
                continue
            dist2 = 0.0
            for c in range(D):
                new = sums[k, c] / counts[k]
                diff = new - cents[k, c]
                dist2 += diff * diff
                cents[k, c] = new
            d = np.sqrt(dist2)
            if d > moved:
                moved = d
        if moved <= tol:
            break
    return cents, labels, n_iter


@njit(cache=True)
def pairwise_contrast(zn, n_pos, inv_tau):
    n_all, D = zn.shape
    n = n_pos
    s = np.empty((n, n_all), dtype=zn.dtype)
    for i in range(n):
        for j in range(n_all):
            acc = 0.0
            for c in range(D):
                acc += zn[i, c] * zn[j, c]
            s[i, j] = acc * inv_tau
    loss = 0.0
    g = np.empty((n, n_all), dtype=zn.dtype)
    for i in range(n):
        smax = s[i, 0]
        for j in range(1, n_all):
            if s[i, j] > smax:
                smax = s[i, j]
        denom = 0.0
        for j in range(n_all):
            denom += np.exp(s[i, j] - smax)
        lse = smax + np.log(denom)
        pos = 0.0
        for j in range(n):
            pos += s[i, j]
        loss -= (pos - n * lse) / (n * n)
        for j in range(n_all):
            gij = np.exp(s[i, j] - smax) / denom / n
            if j < n:
                gij -= 1.0 / (n * n)
            g[i, j] = gij * inv_tau
    dzn = np.zeros((n_all, D), dtype=zn.dtype)
    for i in range(n):
        for j in range(n_all):
            gij = g[i, j]
            for c in range(D):
                dzn[j, c] += gij * zn[i, c]
                dzn[i, c] += gij * zn[j, c]
    return loss, dzn


@njit(cache=True)
def box_mean_valid(m, k):
    H, W = m.shape
    r = k // 2
    out = np.empty((H, W), dtype=m.dtype)
    for i in range(H):
        i0 = i - r
        if i0 < 0:
            i0 = 0
        i1 = i + r + 1
        if i1 > H:
            i1 = H
        for j in range(W):
            j0 = j - r
            if j0 < 0:
                j0 = 0
            j1 = j + r + 1
            if j1 > W:
                j1 = W
            acc = 0.0
            for ii in range(i0, i1):
                for jj in range(j0, j1):
                    acc += m[ii, jj]
            out[i, j] = acc / ((i1 - i0) * (j1 - j0))
    return out
