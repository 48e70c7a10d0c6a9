"""Inference stages shared by the staged and single-shot command paths.

Each stage is a pure function of its inputs. Running them one by one, with
their outputs stored losslessly in between, gives the same bits as the
single-shot :func:`reconstruct`.
"""
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import io
from .errors import FormatError, ShapeError, StateError
from .mosaic import DemosaicMethod, RawMosaic, demosaic, from_uint16
from .nets import batch_features, plm_tensor
from .plm import analytic_prior
from .polar import ExtremaMode, PolarStack, StokesMap, extrema, stokes_from_stack


def load_stack(path, method=DemosaicMethod.EDGE_AWARE):
    """(4, H, W) float64 captures from a stack blob or a raw mosaic PGM."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return stage_demosaic(io.read_pgm(path), method)
    arr = io.read_tensorblob(path)
    if arr.ndim != 3 or arr.shape[0] != 4:
        raise ShapeError(f"{path}: expected a (4, H, W) capture stack, got {arr.shape}")
    return arr.astype(np.float64)


def load_field(path, what, channels=None):
    arr = io.read_tensorblob(path)
    if channels is None and arr.ndim != 2:
        raise ShapeError(f"{path}: expected a 2-D {what} map, got {arr.shape}")
    if channels is not None and (arr.ndim != 3 or arr.shape[0] != channels):
        raise ShapeError(f"{path}: expected a ({channels}, H, W) {what}, got {arr.shape}")
    return arr


def stage_demosaic(raw16, method=DemosaicMethod.EDGE_AWARE):
    if raw16.dtype != np.uint16:
        raise FormatError(f"raw mosaic must be 16-bit, got {raw16.dtype}")
    return demosaic(RawMosaic(from_uint16(raw16)), DemosaicMethod(method)).as_array()


def stage_stokes(stack):
    return stokes_from_stack(PolarStack.from_array(stack)).as_array()


def _features(stack):
    return batch_features(np.asarray(stack, dtype=np.float64)[None])


def stage_infer(model, stack):
    """A-Net angle map (H, W) in the model's precision."""
    if model.anet is None:
        raise StateError(f"pipeline mode {model.mode.value} has no angle network")
    with ad.no_grad():
        return model.angle(_features(stack)).data[0, 0]


def stage_prior(stokes, angle=None):
    """Malus prior from a Stokes map; the closed-form minimum when ``angle`` is None."""
    st = StokesMap.from_array(np.asarray(stokes, dtype=np.float64))
    if angle is None:
        return analytic_prior(st).p
    angle = np.asarray(angle)
    if angle.shape != st.shape:
        raise ShapeError(f"angle map {angle.shape} does not match Stokes map {st.shape}")
    ex = extrema(st, ExtremaMode.PHYS_CONSISTENT)
    dt = angle.dtype
    with ad.no_grad():
        p = plm_tensor(ad.Tensor(ex.imax[None, None].astype(dt)),
                       ad.Tensor(ex.imin[None, None].astype(dt)),
                       ad.Tensor(angle[None, None]))
    return p.data[0, 0]


def stage_reconstruct(model, stack, prior=None):
    """R-Net output (H, W) given captures and, for prior-fed modes, a prior map."""
    feats = _features(stack)
    with ad.no_grad():
        pt = None
        if prior is not None:
            prior = np.asarray(prior)
            if prior.shape != feats["imin"].shape[2:]:
                raise ShapeError(f"prior {prior.shape} does not match captures "
                                 f"{feats['imin'].shape[2:]}")
            pt = ad.Tensor(prior[None, None].astype(model.dtype, copy=False))
        return model.reconstruct(feats, pt).data[0, 0]


def reconstruct(model, stack):
    """Single-shot captures -> reconstruction through the whole model graph."""
    with ad.no_grad():
        rec, _, _ = model(_features(stack))
    return rec.data[0, 0]
