"""Minimal-highlight prior from the Malus-law location model.

The angle map is an offset from each pixel's polarization axis, so the
Malus term sweeps [imin, imax] and ``A = pi/2`` is the closed-form optimum.
Unpolarized diffuse light and film degradation are already inside both
extrema; they are not added a second time.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeError
from .polar import ExtremaMode, extrema, malus_eval


class PriorSource(str, Enum):
    ANALYTIC = "analytic"
    NETWORK = "network"


@dataclass(frozen=True)
class PriorField:
    p: np.ndarray
    mode: ExtremaMode
    source: PriorSource


def plm_prior(st, A, mode=ExtremaMode.PHYS_CONSISTENT, source=PriorSource.NETWORK):
    A = np.asarray(A, dtype=np.float64)
    if A.shape != st.shape:
        raise ShapeError(f"angle map {A.shape} does not match Stokes map {st.shape}")
    ex = extrema(st, mode)
    return PriorField(malus_eval(ex, A), ExtremaMode(mode), PriorSource(source))


def analytic_prior(st):
    """Per-pixel minimum of the Malus sweep, (s0 - L)/2."""
    ex = extrema(st, ExtremaMode.PHYS_CONSISTENT)
    return PriorField(ex.imin, ExtremaMode.PHYS_CONSISTENT, PriorSource.ANALYTIC)


def highlight_location(stack, prior):
    """Mean capture minus the prior, clamped at zero; large where highlights sit."""
    p = prior.p if isinstance(prior, PriorField) else np.asarray(prior)
    if p.shape != stack.shape:
        raise ShapeError(f"prior {p.shape} does not match stack {stack.shape}")
    return np.maximum(stack.mean() - p, 0.0)
