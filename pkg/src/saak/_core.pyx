# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops in ``_fallback``; results are identical."""

import numpy as np

cimport numpy as cnp
from libc.string cimport memcpy

cnp.import_array()


def extract_patches(const float[:, :, :, ::1] x, Py_ssize_t ks, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], k = x.shape[3]
    cdef Py_ssize_t d1 = (h - ks) // stride + 1
    cdef Py_ssize_t d2 = (w - ks) // stride + 1
    cdef Py_ssize_t dim = ks * ks * k
    cdef Py_ssize_t run = ks * k  # one window row is contiguous in the input
    out_arr = np.empty((n * d1 * d2, dim), dtype=np.float32)
    if out_arr.size == 0:
        return out_arr
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t a, i, j, u, row = 0
    with nogil:
        for a in range(n):
            for i in range(d1):
                for j in range(d2):
                    for u in range(ks):
                        memcpy(&out[row, u * run], &x[a, i * stride + u, j * stride, 0], run * sizeof(float))
                    row += 1
    return out_arr


def max_pool(const float[:, :, :, ::1] x, Py_ssize_t window, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], k = x.shape[3]
    cdef Py_ssize_t d1 = (h - window) // stride + 1
    cdef Py_ssize_t d2 = (w - window) // stride + 1
    out_arr = np.empty((n, d1, d2, k), dtype=np.float32)
    cdef float[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t a, i, j, u, v, c
    cdef float best, val
    with nogil:
        for a in range(n):
            for i in range(d1):
                for j in range(d2):
                    for c in range(k):
                        best = x[a, i * stride, j * stride, c]
                        for u in range(window):
                            for v in range(window):
                                val = x[a, i * stride + u, j * stride + v, c]
                                if val > best:
                                    best = val
                        out[a, i, j, c] = best + 0.0  # -0.0 -> +0.0, as in the fallback
    return out_arr


def augment_relu(const float[::1] dc, const float[:, ::1] proj):
    cdef Py_ssize_t m = proj.shape[0], r = proj.shape[1]
    out_arr = np.empty((m, 2 * r + 1), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t i, q
    cdef float p
    with nogil:
        for i in range(m):
            out[i, 0] = dc[i]
            for q in range(r):
                p = proj[i, q]
                if p > 0:
                    out[i, 2 * q + 1] = p
                    out[i, 2 * q + 2] = 0
                else:
                    out[i, 2 * q + 1] = 0
                    out[i, 2 * q + 2] = -p if p < 0 else 0
    return out_arr


def bin_majority_wins(const float[:, ::1] x, labels, int n_classes, int n_bins):
    cdef Py_ssize_t n = x.shape[0], L = x.shape[1]
    cdef const long long[::1] y = np.ascontiguousarray(labels, dtype=np.int64)
    lo_arr = np.empty(L, dtype=np.float64)
    hi_arr = np.empty(L, dtype=np.float64)
    counts_arr = np.zeros((L, n_bins, n_classes), dtype=np.int32)
    wins_arr = np.zeros((L, n_classes), dtype=np.int32)
    const_arr = np.zeros(L, dtype=np.uint8)
    cdef double[::1] lo = lo_arr, hi = hi_arr
    cdef int[:, :, ::1] counts = counts_arr
    cdef int[:, ::1] wins = wins_arr
    cdef unsigned char[::1] constant = const_arr
    cdef Py_ssize_t a, l, b, c, best_c
    cdef double v, nb = n_bins
    cdef long long idx
    cdef int best
    with nogil:
        for l in range(L):
            lo[l] = x[0, l]
            hi[l] = x[0, l]
        for a in range(1, n):
            for l in range(L):
                v = x[a, l]
                if v < lo[l]:
                    lo[l] = v
                if v > hi[l]:
                    hi[l] = v
        for a in range(n):
            for l in range(L):
                if hi[l] == lo[l]:
                    continue
                v = x[a, l]
                idx = <long long>((v - lo[l]) * nb / (hi[l] - lo[l]))
                if idx > n_bins - 1:
                    idx = n_bins - 1
                counts[l, idx, y[a]] += 1
        for l in range(L):
            if hi[l] == lo[l]:
                constant[l] = 1
                continue
            for b in range(n_bins):
                best = 0
                best_c = -1
                for c in range(n_classes):
                    if counts[l, b, c] > best:
                        best = counts[l, b, c]
                        best_c = c
                if best_c >= 0:
                    wins[l, best_c] += 1
    return wins_arr, const_arr
