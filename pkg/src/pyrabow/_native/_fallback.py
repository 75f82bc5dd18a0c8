"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_core.pyx``.
Results agree to floating-point rounding; the test suite checks this.
"""
from __future__ import annotations

import math

import numpy as np

NUM_CELLS = 4
NUM_ORIENTATIONS = 8
DESCRIPTOR_DIM = NUM_CELLS * NUM_CELLS * NUM_ORIENTATIONS
CLIP_VALUE = 0.2
TAU = 1e-12


def _patch_geometry(patch_size):
    """Spatial bin indices and weights shared by every keypoint of one patch size.

    Returns (flat_pixel, cell, weight) triples as arrays: each patch pixel
    contributes to up to four spatial cells, bilinearly weighted and
    multiplied by the Gaussian window.
    """
    ps = patch_size
    cell_width = ps / NUM_CELLS
    sigma = ps / 2.0
    coords = np.arange(ps) + 0.5
    b = coords / cell_width - 0.5
    b0 = np.floor(b).astype(np.int64)
    frac = b - b0
    g = np.exp(-((coords - ps / 2.0) ** 2) / (2.0 * sigma * sigma))

    pix, cell, wts = [], [], []
    for r in range(ps):
        for c in range(ps):
            gw = g[r] * g[c]
            for iy, wy in ((b0[r], 1.0 - frac[r]), (b0[r] + 1, frac[r])):
                if iy < 0 or iy >= NUM_CELLS:
                    continue
                for ix, wx in ((b0[c], 1.0 - frac[c]), (b0[c] + 1, frac[c])):
                    if ix < 0 or ix >= NUM_CELLS:
                        continue
                    pix.append(r * ps + c)
                    cell.append(iy * NUM_CELLS + ix)
                    wts.append(gw * wy * wx)
    return (np.asarray(pix, dtype=np.int64), np.asarray(cell, dtype=np.int64),
            np.asarray(wts, dtype=np.float64))


def _normalize_descriptors(hist):
    norms = np.sqrt((hist * hist).sum(axis=1))
    nz = norms > 0
    hist[nz] /= norms[nz, None]
    np.minimum(hist, CLIP_VALUE, out=hist)
    norms = np.sqrt((hist * hist).sum(axis=1))
    nz = norms > 0
    hist[nz] /= norms[nz, None]
    return hist


def sift_descriptors(magnitude, orientation, xs, ys, patch_size):
    """Compute 128-D descriptors for keypoints centred at integer (xs, ys).

    The patch of side ``patch_size`` spans columns ``x - patch_size // 2``
    up to (excluding) ``x - patch_size // 2 + patch_size``; likewise rows.
    """
    magnitude = np.ascontiguousarray(magnitude, dtype=np.float64)
    orientation = np.ascontiguousarray(orientation, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    n = len(xs)
    ps = int(patch_size)
    if n == 0:
        return np.zeros((0, DESCRIPTOR_DIM))

    pix, cell, wts = _patch_geometry(ps)
    half = ps // 2
    offs = np.arange(ps)
    rows = (ys - half)[:, None, None] + offs[None, :, None]
    cols = (xs - half)[:, None, None] + offs[None, None, :]
    mag = magnitude[rows, cols].reshape(n, ps * ps)
    ori = orientation[rows, cols].reshape(n, ps * ps)

    o = ori * (NUM_ORIENTATIONS / (2.0 * math.pi))
    o0 = np.floor(o)
    of = o - o0
    o0 = o0.astype(np.int64) % NUM_ORIENTATIONS
    o1 = (o0 + 1) % NUM_ORIENTATIONS

    # contributions: (keypoint, entry) -> two orientation bins
    m = mag[:, pix] * wts[None, :]
    base = (np.arange(n) * DESCRIPTOR_DIM)[:, None] + cell[None, :] * NUM_ORIENTATIONS
    idx0 = base + o0[:, pix]
    idx1 = base + o1[:, pix]
    w1 = of[:, pix]
    total = n * DESCRIPTOR_DIM
    hist = np.bincount(idx0.ravel(), weights=(m * (1.0 - w1)).ravel(), minlength=total)
    hist += np.bincount(idx1.ravel(), weights=(m * w1).ravel(), minlength=total)
    return _normalize_descriptors(hist.reshape(n, DESCRIPTOR_DIM))


def hist_intersection_gram(X, Y):
    """Gram matrix of K(a, b) = sum_i min(a_i, b_i)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    out = np.empty((X.shape[0], Y.shape[0]))
    for i in range(X.shape[0]):
        out[i] = np.minimum(X[i][None, :], Y).sum(axis=1)
    return out


def smo_solve(K, y, C, tol, max_iter):
    """Solve the binary soft-margin SVM dual by sequential pairwise updates.

    Working pairs are chosen with second-order information (maximal-gain
    pair). Stops when the maximal KKT violation drops below ``tol`` or after
    ``max_iter`` updates.

    Returns ``(alpha, bias, n_iter, violation)`` where the decision value is
    ``sum_i alpha_i y_i K(x_i, x) + bias``.
    """
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    alpha = np.zeros(n)
    G = -np.ones(n)
    Kd = np.diag(K).copy()
    violation = np.inf
    it = 0
    while True:
        # i: maximal -y_t G_t over the "up" set
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        score = -y * G
        if not up.any() or not low.any():
            violation = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        gmax = score[i]
        gmin = score[low].min()
        violation = gmax - gmin
        if violation < tol or it >= max_iter:
            break
        cand = low & (score < gmax)
        if not cand.any():
            break
        b = gmax - score
        a = Kd[i] + Kd - 2.0 * K[i]
        a = np.where(a > 0, a, TAU)
        obj = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(obj))

        ai_old, aj_old = alpha[i], alpha[j]
        ai, aj = ai_old, aj_old
        Qij = y[i] * y[j] * K[i, j]
        if y[i] != y[j]:
            quad = Kd[i] + Kd[j] + 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0:
                    ai = 0.0
                    aj = -diff
            if diff > 0:
                if ai > C:
                    ai = C
                    aj = C - diff
            else:
                if aj > C:
                    aj = C
                    ai = C + diff
        else:
            quad = Kd[i] + Kd[j] - 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ai -= delta
            aj += delta
            if total > C:
                if ai > C:
                    ai = C
                    aj = total - C
            else:
                if aj < 0:
                    aj = 0.0
                    ai = total
            if total > C:
                if aj > C:
                    aj = C
                    ai = total - C
            else:
                if ai < 0:
                    ai = 0.0
                    aj = total
        alpha[i] = ai
        alpha[j] = aj
        G += y * (y[i] * K[i] * (ai - ai_old) + y[j] * K[j] * (aj - aj_old))
        it += 1

    return alpha, -_compute_rho(G, alpha, y, C), it, float(violation)


def _compute_rho(G, alpha, y, C):
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yG[free].mean())
    at_upper = alpha >= C
    ub_mask = (at_upper & (y < 0)) | (~at_upper & (y > 0))
    lb_mask = ~ub_mask
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2.0)
