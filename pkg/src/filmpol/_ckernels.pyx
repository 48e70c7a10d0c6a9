# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: 3x3 im2col/col2im for the conv layers and the
edge-weighted residual interpolation used by the edge-aware demosaicker.

Every routine accumulates in the same order as its counterpart in
``_pykernels`` so both backends give bit-identical results.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

ctypedef fused real:
    float
    double


def im2col3x3(real[:, :, :, ::1] x, real[:, ::1] cols):
    """Fill ``cols`` (N*H*W, C*9) from ``x`` (N, C, H, W), zero padded."""
    cdef Py_ssize_t n_b = x.shape[0], n_c = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t n, c, ky, y, xx, p, col
    xp_arr = np.zeros((n_b, n_c, h + 2, w + 2), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] xp = xp_arr
    xp[:, :, 1:h + 1, 1:w + 1] = x
    for n in range(n_b):
        for y in range(h):
            for xx in range(w):
                p = (n * h + y) * w + xx
                for c in range(n_c):
                    for ky in range(3):
                        col = c * 9 + ky * 3
                        cols[p, col] = xp[n, c, y + ky, xx]
                        cols[p, col + 1] = xp[n, c, y + ky, xx + 1]
                        cols[p, col + 2] = xp[n, c, y + ky, xx + 2]


def col2im3x3(real[:, ::1] cols, real[:, :, :, ::1] out):
    """Adjoint of im2col3x3: sum ``cols`` (N*H*W, C*9) back into ``out`` (N, C, H, W).

    Each output element receives its nine contributions in descending
    kernel-offset order.
    """
    cdef Py_ssize_t n_b = out.shape[0], n_c = out.shape[1]
    cdef Py_ssize_t h = out.shape[2], w = out.shape[3]
    cdef Py_ssize_t n, c, ky, y, xx, p, col
    op_arr = np.zeros((n_b, n_c, h + 2, w + 2), dtype=np.asarray(out).dtype)
    cdef real[:, :, :, ::1] op = op_arr
    for n in range(n_b):
        for y in range(h):
            for xx in range(w):
                p = (n * h + y) * w + xx
                for c in range(n_c):
                    for ky in range(3):
                        col = c * 9 + ky * 3
                        op[n, c, y + ky, xx] += cols[p, col]
                        op[n, c, y + ky, xx + 1] += cols[p, col + 1]
                        op[n, c, y + ky, xx + 2] += cols[p, col + 2]
    out[:, :, :, :] = op[:, :, 1:h + 1, 1:w + 1]


def edge_residual_fill(double[:, ::1] resid, cnp.uint8_t[:, ::1] known,
                       double[:, ::1] guide, double eps):
    """Fill unknown pixels of ``resid`` with an inverse-guide-difference
    weighted mean of the known pixels in their 3x3 neighbourhood."""
    cdef Py_ssize_t h = resid.shape[0], w = resid.shape[1]
    cdef Py_ssize_t y, x, dy, dx, qy, qx
    cdef double wsum, acc, wt, g
    out = np.array(resid, copy=True)
    cdef double[:, ::1] o = out
    for y in range(h):
        for x in range(w):
            if known[y, x]:
                continue
            g = guide[y, x]
            wsum = 0.0
            acc = 0.0
            for dy in range(-1, 2):
                qy = y + dy
                if qy < 0 or qy >= h:
                    continue
                for dx in range(-1, 2):
                    qx = x + dx
                    if qx < 0 or qx >= w or not known[qy, qx]:
                        continue
                    wt = 1.0 / (fabs(g - guide[qy, qx]) + eps)
                    wsum = wsum + wt
                    acc = acc + wt * resid[qy, qx]
            o[y, x] = acc / wsum if wsum > 0.0 else 0.0
    return out
