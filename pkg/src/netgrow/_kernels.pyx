# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im for stride-1 square kernels."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, :] x, int d, int pad):
    cdef Py_ssize_t n = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = H + 2 * pad - d + 1, Wo = W + 2 * pad - d + 1
    out = np.zeros((n, C * d * d, Ho * Wo), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t i, c, u, v, y, xx, row, sy, sx
    for i in range(n):
        for c in range(C):
            for u in range(d):
                for v in range(d):
                    row = (c * d + u) * d + v
                    for y in range(Ho):
                        sy = y + u - pad
                        if sy < 0 or sy >= H:
                            continue
                        for xx in range(Wo):
                            sx = xx + v - pad
                            if 0 <= sx < W:
                                o[i, row, y * Wo + xx] = x[i, c, sy, sx]
    return out


def col2im(const double[:, :, :] cols, tuple shape, int d, int pad):
    cdef Py_ssize_t n = shape[0], C = shape[1], H = shape[2], W = shape[3]
    cdef Py_ssize_t Ho = H + 2 * pad - d + 1, Wo = W + 2 * pad - d + 1
    out = np.zeros((n, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t i, c, u, v, y, xx, row, sy, sx
    for i in range(n):
        for c in range(C):
            for u in range(d):
                for v in range(d):
                    row = (c * d + u) * d + v
                    for y in range(Ho):
                        sy = y + u - pad
                        if sy < 0 or sy >= H:
                            continue
                        for xx in range(Wo):
                            sx = xx + v - pad
                            if 0 <= sx < W:
                                o[i, c, sy, sx] += cols[i, row, y * Wo + xx]
    return out
