# cython: language_level=3
"""Compiled twins of the kernels in ``_fallback``.

Signatures and results match the numpy versions; only speed differs.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor, sqrt, M_PI, INFINITY

cnp.import_array()

cdef enum:
    NUM_CELLS = 4
    NUM_ORIENTATIONS = 8
    DESCRIPTOR_DIM = 128

cdef double CLIP_VALUE = 0.2
cdef double TAU = 1e-12


cdef void _normalize(double[::1] h) noexcept nogil:
    cdef Py_ssize_t d
    cdef double s = 0.0
    for d in range(DESCRIPTOR_DIM):
        s += h[d] * h[d]
    if s <= 0.0:
        return
    s = sqrt(s)
    for d in range(DESCRIPTOR_DIM):
        h[d] /= s
        if h[d] > CLIP_VALUE:
            h[d] = CLIP_VALUE
    s = 0.0
    for d in range(DESCRIPTOR_DIM):
        s += h[d] * h[d]
    if s <= 0.0:
        return
    s = sqrt(s)
    for d in range(DESCRIPTOR_DIM):
        h[d] /= s


def sift_descriptors(magnitude, orientation, xs, ys, patch_size):
    """Compute 128-D descriptors for keypoints centred at integer (xs, ys)."""
    cdef double[:, ::1] mag = np.ascontiguousarray(magnitude, dtype=np.float64)
    cdef double[:, ::1] ori = np.ascontiguousarray(orientation, dtype=np.float64)
    cdef long long[::1] kx = np.ascontiguousarray(xs, dtype=np.int64)
    cdef long long[::1] ky = np.ascontiguousarray(ys, dtype=np.int64)
    cdef Py_ssize_t n = kx.shape[0]
    cdef int ps = int(patch_size)
    out = np.zeros((n, DESCRIPTOR_DIM), dtype=np.float64)
    if n == 0:
        return out
    cdef double[:, ::1] hist = out

    # per-axis geometry, identical for every keypoint
    cdef double[::1] g = np.empty(ps)
    cdef long long[::1] b0 = np.empty(ps, dtype=np.int64)
    cdef double[::1] bf = np.empty(ps)
    cdef double cell_width = ps / <double>NUM_CELLS
    cdef double sigma = ps / 2.0
    cdef double u, b
    cdef Py_ssize_t r, c, k
    for r in range(ps):
        u = r + 0.5
        b = u / cell_width - 0.5
        b0[r] = <long long>floor(b)
        bf[r] = b - b0[r]
        g[r] = exp(-((u - ps / 2.0) * (u - ps / 2.0)) / (2.0 * sigma * sigma))

    cdef int half = ps // 2
    cdef long long x0, y0, iy, ix, ob0, ob1
    cdef double m, o, of, wy, wx, w, scale = NUM_ORIENTATIONS / (2.0 * M_PI)
    cdef int dy, dx
    with nogil:
        for k in range(n):
            x0 = kx[k] - half
            y0 = ky[k] - half
            for r in range(ps):
                for c in range(ps):
                    m = mag[y0 + r, x0 + c]
                    if m == 0.0:
                        continue
                    m = m * g[r] * g[c]
                    o = ori[y0 + r, x0 + c] * scale
                    ob0 = <long long>floor(o)
                    of = o - ob0
                    ob0 = ob0 % NUM_ORIENTATIONS
                    if ob0 < 0:
                        ob0 += NUM_ORIENTATIONS
                    ob1 = (ob0 + 1) % NUM_ORIENTATIONS
                    for dy in range(2):
                        iy = b0[r] + dy
                        if iy < 0 or iy >= NUM_CELLS:
                            continue
                        wy = bf[r] if dy else 1.0 - bf[r]
                        for dx in range(2):
                            ix = b0[c] + dx
                            if ix < 0 or ix >= NUM_CELLS:
                                continue
                            wx = bf[c] if dx else 1.0 - bf[c]
                            w = m * wy * wx
                            hist[k, (iy * NUM_CELLS + ix) * NUM_ORIENTATIONS + ob0] += w * (1.0 - of)
                            hist[k, (iy * NUM_CELLS + ix) * NUM_ORIENTATIONS + ob1] += w * of
            _normalize(hist[k])
    return out


def hist_intersection_gram(X, Y):
    """Gram matrix of K(a, b) = sum_i min(a_i, b_i)."""
    cdef double[:, ::1] A = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] B = np.ascontiguousarray(Y, dtype=np.float64)
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], d = A.shape[1]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] K = out
    cdef Py_ssize_t i, j, t
    cdef double s, a, b
    with nogil:
        for i in range(n):
            for j in range(m):
                s = 0.0
                for t in range(d):
                    a = A[i, t]
                    b = B[j, t]
                    s += a if a < b else b
                K[i, j] = s
    return out


def smo_solve(K, y, double C, double tol, long long max_iter):
    """Binary SVM dual solver; see ``_fallback.smo_solve``."""
    cdef double[:, ::1] Km = np.ascontiguousarray(K, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0]
    alpha_arr = np.zeros(n)
    G_arr = -np.ones(n)
    cdef double[::1] alpha = alpha_arr
    cdef double[::1] G = G_arr
    cdef Py_ssize_t i, j, t
    cdef long long it = 0
    cdef double gmax, gmin, score, violation = INFINITY
    cdef double bdiff, a, obj, best
    cdef double ai, aj, ai_old, aj_old, quad, delta, diff, total, Qij, dai, daj
    cdef bint up, low

    with nogil:
        while True:
            gmax = -INFINITY
            gmin = INFINITY
            i = -1
            for t in range(n):
                score = -yv[t] * G[t]
                if yv[t] > 0:
                    up = alpha[t] < C
                    low = alpha[t] > 0
                else:
                    up = alpha[t] > 0
                    low = alpha[t] < C
                if up and score > gmax:
                    gmax = score
                    i = t
                if low and score < gmin:
                    gmin = score
            if i < 0 or gmin == INFINITY:
                violation = 0.0
                break
            violation = gmax - gmin
            if violation < tol or it >= max_iter:
                break

            j = -1
            best = INFINITY
            for t in range(n):
                if yv[t] > 0:
                    low = alpha[t] > 0
                else:
                    low = alpha[t] < C
                if not low:
                    continue
                score = -yv[t] * G[t]
                if score >= gmax:
                    continue
                bdiff = gmax - score
                a = Km[i, i] + Km[t, t] - 2.0 * Km[i, t]
                if a <= 0:
                    a = TAU
                obj = -(bdiff * bdiff) / a
                if obj < best:
                    best = obj
                    j = t
            if j < 0:
                break

            ai_old = alpha[i]
            aj_old = alpha[j]
            ai = ai_old
            aj = aj_old
            Qij = yv[i] * yv[j] * Km[i, j]
            if yv[i] != yv[j]:
                quad = Km[i, i] + Km[j, j] + 2.0 * Qij
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
                quad = Km[i, i] + Km[j, j] - 2.0 * Qij
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
            dai = ai - ai_old
            daj = aj - aj_old
            for t in range(n):
                G[t] += yv[t] * (yv[i] * Km[i, t] * dai + yv[j] * Km[j, t] * daj)
            it += 1

    return alpha_arr, -_compute_rho(G_arr, alpha_arr, np.asarray(yv), C), int(it), float(violation)


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
