"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
fallback is. Set ``FILMPOL_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _pykernels

_forced = os.environ.get("FILMPOL_PURE_PYTHON", "") not in ("", "0")

if _forced:
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"


def use_backend(name):
    """Switch backend at runtime ("cython" or "python"); returns the old name."""
    global _impl, BACKEND
    old = BACKEND
    if name == "python":
        _impl = _pykernels
    elif name == "cython":
        from . import _ckernels
        _impl = _ckernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
    return old


def im2col3x3(x):
    """(N, C, H, W) -> (N*H*W, C*9) patch matrix for a 3x3 same-padded conv."""
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    cols = np.empty((n * h * w, c * 9), dtype=x.dtype)
    _impl.im2col3x3(x, cols)
    return cols


def col2im3x3(cols, shape):
    """Adjoint of :func:`im2col3x3`."""
    cols = np.ascontiguousarray(cols)
    out = np.zeros(shape, dtype=cols.dtype)
    _impl.col2im3x3(cols, out)
    return out


def edge_residual_fill(resid, known, guide, eps):
    return _impl.edge_residual_fill(
        np.ascontiguousarray(resid, dtype=np.float64),
        np.ascontiguousarray(known, dtype=np.uint8),
        np.ascontiguousarray(guide, dtype=np.float64),
        float(eps),
    )
