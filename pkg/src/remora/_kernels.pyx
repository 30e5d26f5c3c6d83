# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: exhaustive SAD block search and the selective scan."""

import numpy as np

from libc.math cimport exp, expm1, fabs, isfinite
from libc.stdint cimport uint8_t, int16_t, int32_t, int64_t


def block_match_sad(const uint8_t[:, :, ::1] cur,
                    const uint8_t[:, :, ::1] ref,
                    int block_h, int block_w,
                    const int32_t[:, ::1] candidates):
    """Best displacement per block; candidates arrive in tie-break order."""
    cdef Py_ssize_t H = cur.shape[0], W = cur.shape[1], C = cur.shape[2]
    cdef Py_ssize_t gh = H // block_h, gw = W // block_w
    cdef Py_ssize_t n_cand = candidates.shape[0]
    out_arr = np.zeros((gh, gw, 2), dtype=np.int16)
    cdef int16_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t u, v, k, i, j, c, y0, x0, ry, rx
    cdef int dy, dx
    cdef int64_t sad, best
    cdef int a, b
    with nogil:
        for u in range(gh):
            y0 = u * block_h
            for v in range(gw):
                x0 = v * block_w
                best = -1
                for k in range(n_cand):
                    dy = candidates[k, 0]
                    dx = candidates[k, 1]
                    ry = y0 + dy
                    rx = x0 + dx
                    if ry < 0 or rx < 0 or ry + block_h > H or rx + block_w > W:
                        continue
                    sad = 0
                    for i in range(block_h):
                        for j in range(block_w):
                            for c in range(C):
                                a = cur[y0 + i, x0 + j, c]
                                b = ref[ry + i, rx + j, c]
                                sad += a - b if a > b else b - a
                        if best >= 0 and sad >= best:
                            break
                    if best < 0 or sad < best:
                        best = sad
                        out[u, v, 0] = <int16_t>dy
                        out[u, v, 1] = <int16_t>dx
    return out_arr


def selective_scan_core(const double[:, ::1] x,
                        const double[:, ::1] delta,
                        const double[:, ::1] A,
                        const double[:, ::1] B,
                        const double[:, ::1] C,
                        const double[::1] D,
                        const double[:, ::1] h0):
    """Per-channel ZOH recurrence with time-varying (delta, B, C).

    Returns ``(y, bad_step)``; ``bad_step`` is -1 unless a non-finite
    output appeared, in which case it is the first offending step.
    """
    cdef Py_ssize_t L = x.shape[0], d = x.shape[1], Q = A.shape[1]
    cdef Py_ssize_t t, ch, q
    y_arr = np.empty((L, d), dtype=np.float64)
    h_arr = np.array(h0, dtype=np.float64, copy=True)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] h = h_arr
    cdef double dt, xv, a, coef, acc
    cdef Py_ssize_t bad = -1
    with nogil:
        for t in range(L):
            for ch in range(d):
                dt = delta[t, ch]
                xv = x[t, ch]
                acc = 0.0
                for q in range(Q):
                    a = dt * A[ch, q]
                    if fabs(a) < 1e-6:
                        coef = dt * (1.0 + a / 2.0 + a * a / 6.0)
                    else:
                        coef = expm1(a) / A[ch, q]
                    h[ch, q] = exp(a) * h[ch, q] + coef * B[t, q] * xv
                    acc = acc + C[t, q] * h[ch, q]
                acc = acc + D[ch] * xv
                y[t, ch] = acc
                if bad < 0 and not isfinite(acc):
                    bad = t
    return y_arr, bad
