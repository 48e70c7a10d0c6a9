"""Division-of-focal-plane sensor mosaics: encode, decompose, demosaic."""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels
from .errors import DataError, ParameterError, ShapeError
from .polar import PolarStack

# analyzer angle (degrees) at each 2x2 superpixel position, IMX250MZR order
DEFAULT_LAYOUT = ((90, 45), (135, 0))
_ANGLE_ORDER = (0, 45, 90, 135)
EDGE_EPS = 1e-2
U16_MAX = 65535


class DemosaicMethod(str, Enum):
    SUBSAMPLE = "subsample"
    BILINEAR = "bilinear"
    EDGE_AWARE = "edge-aware"


def _normalize_layout(layout):
    layout = tuple(tuple(int(a) for a in row) for row in layout)
    if len(layout) != 2 or any(len(r) != 2 for r in layout):
        raise ParameterError("layout must be 2x2")
    if sorted(a for r in layout for a in r) != list(_ANGLE_ORDER):
        raise ParameterError(f"layout must use each of {_ANGLE_ORDER} once, got {layout}")
    return layout


def _offsets(layout):
    """angle -> (row, col) offset inside the superpixel."""
    return {layout[r][c]: (r, c) for r in range(2) for c in range(2)}


@dataclass(frozen=True)
class RawMosaic:
    data: np.ndarray
    layout: tuple = field(default=DEFAULT_LAYOUT)

    def __post_init__(self):
        object.__setattr__(self, "layout", _normalize_layout(self.layout))
        d = np.asarray(self.data)
        if d.ndim != 2:
            raise ShapeError(f"raw mosaic must be 2-D, got shape {d.shape}")
        if d.shape[0] % 2 or d.shape[1] % 2:
            raise ShapeError(f"raw mosaic dimensions must be even, got {d.shape}")

    @property
    def shape(self):
        return np.shape(self.data)


def to_uint16(field_):
    """Normalized [0, 1] -> 16-bit with round-half-to-even."""
    f = np.asarray(field_, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise DataError("cannot quantize non-finite values")
    return np.rint(np.clip(f, 0.0, 1.0) * U16_MAX).astype(np.uint16)


def from_uint16(arr):
    return np.asarray(arr, dtype=np.float64) / U16_MAX


def decompose_raw(raw):
    """Split a mosaic into four quarter-resolution channels."""
    offs = _offsets(raw.layout)
    d = np.asarray(raw.data)
    chans = [d[offs[a][0]::2, offs[a][1]::2] for a in _ANGLE_ORDER]
    return PolarStack(*(np.array(c) for c in chans))


def mosaic(stack, layout=DEFAULT_LAYOUT):
    """Sample a full-resolution stack through the 2x2 analyzer pattern."""
    layout = _normalize_layout(layout)
    h, w = stack.shape
    if h % 2 or w % 2:
        raise ShapeError(f"stack dimensions must be even, got {stack.shape}")
    offs = _offsets(layout)
    out = np.empty((h, w), dtype=np.result_type(*stack.channels()))
    for a, ch in zip(_ANGLE_ORDER, stack.channels()):
        r, c = offs[a]
        out[r::2, c::2] = np.asarray(ch)[r::2, c::2]
    return RawMosaic(out, layout)


def _sample_mask(shape, off):
    m = np.zeros(shape, dtype=bool)
    m[off[0]::2, off[1]::2] = True
    return m


def _correlate3(x, k):
    h, w = x.shape
    xp = np.zeros((h + 2, w + 2))
    xp[1:-1, 1:-1] = x
    out = np.zeros((h, w))
    for dy in range(3):
        for dx in range(3):
            if k[dy][dx]:
                out += k[dy][dx] * xp[dy:dy + h, dx:dx + w]
    return out


_BILINEAR_KERNEL = ((0.25, 0.5, 0.25), (0.5, 1.0, 0.5), (0.25, 0.5, 0.25))


def _bilinear_channel(d, mask):
    # normalized convolution: exact bilinear inside, one-sided at borders
    num = _correlate3(np.where(mask, d, 0.0), _BILINEAR_KERNEL)
    den = _correlate3(mask.astype(np.float64), _BILINEAR_KERNEL)
    out = num / den
    out[mask] = d[mask]
    return out


def _subsample_channel(d, off):
    h, w = d.shape
    sub = d[off[0]::2, off[1]::2]
    return np.repeat(np.repeat(sub, 2, axis=0), 2, axis=1)[:h, :w].copy()


def demosaic(raw, method=DemosaicMethod.BILINEAR):
    """Full-resolution four-angle stack from a raw mosaic.

    ``subsample`` replicates each superpixel, ``bilinear`` interpolates each
    channel from its own samples, and ``edge-aware`` interpolates the residual
    against a cross-channel guide with weights that fall off across guide
    edges. Sample positions always keep their raw values.
    """
    method = DemosaicMethod(method)
    d = np.asarray(raw.data, dtype=np.float64)
    offs = _offsets(raw.layout)
    masks = {a: _sample_mask(d.shape, offs[a]) for a in _ANGLE_ORDER}

    if method is DemosaicMethod.SUBSAMPLE:
        chans = []
        for a in _ANGLE_ORDER:
            ch = _subsample_channel(d, offs[a])
            ch[masks[a]] = d[masks[a]]
            chans.append(ch)
        return PolarStack(*chans)

    bil = [_bilinear_channel(d, masks[a]) for a in _ANGLE_ORDER]
    if method is DemosaicMethod.BILINEAR:
        return PolarStack(*bil)

    guide = (bil[0] + bil[1] + bil[2] + bil[3]) / 4.0
    # scale-free edge weights keep the method linear in intensity
    peak = float(np.max(np.abs(guide)))
    gnorm = guide / peak if peak > 0 else guide
    chans = []
    for a in _ANGLE_ORDER:
        m = masks[a]
        resid = np.where(m, d - guide, 0.0)
        filled = kernels.edge_residual_fill(resid, m, gnorm, EDGE_EPS)
        ch = guide + filled
        ch[m] = d[m]
        chans.append(ch)
    return PolarStack(*chans)
