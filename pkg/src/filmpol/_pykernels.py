"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``.

Accumulation order matches the compiled loops element for element, so the
two backends are interchangeable without changing a single output bit.
"""
import numpy as np


def im2col3x3(x, cols):
    n_b, n_c, h, w = x.shape
    xp = np.zeros((n_b, n_c, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    view = cols.reshape(n_b, h, w, n_c, 3, 3)
    for ky in range(3):
        for kx in range(3):
            view[..., ky, kx] = xp[:, :, ky:ky + h, kx:kx + w].transpose(0, 2, 3, 1)


def col2im3x3(cols, out):
    n_b, n_c, h, w = out.shape
    op = np.zeros((n_b, n_c, h + 2, w + 2), dtype=out.dtype)
    view = cols.reshape(n_b, h, w, n_c, 3, 3)
    # descending offsets: the order a raster scan over pixels produces
    for ky in (2, 1, 0):
        for kx in (2, 1, 0):
            op[:, :, ky:ky + h, kx:kx + w] += view[..., ky, kx].transpose(0, 3, 1, 2)
    out[...] = op[:, :, 1:-1, 1:-1]


def edge_residual_fill(resid, known, guide, eps):
    h, w = resid.shape
    rp = np.zeros((h + 2, w + 2))
    gp = np.zeros((h + 2, w + 2))
    kp = np.zeros((h + 2, w + 2), dtype=bool)
    rp[1:-1, 1:-1] = resid
    gp[1:-1, 1:-1] = guide
    kp[1:-1, 1:-1] = known.astype(bool)
    wsum = np.zeros((h, w))
    acc = np.zeros((h, w))
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            sl = (slice(1 + dy, 1 + dy + h), slice(1 + dx, 1 + dx + w))
            valid = kp[sl]
            wt = 1.0 / (np.abs(guide - gp[sl]) + eps)
            wsum = np.where(valid, wsum + wt, wsum)
            acc = np.where(valid, acc + wt * rp[sl], acc)
    out = np.array(resid, dtype=np.float64, copy=True)
    fill = ~known.astype(bool)
    safe = np.where(wsum > 0.0, wsum, 1.0)
    out[fill] = np.where(wsum > 0.0, acc / safe, 0.0)[fill]
    return out
