"""Linear Stokes algebra for four-angle polarization captures.

All intensities are normalized to [0, 1]. Fields are numpy arrays of any
matching shape (usually H x W); nothing here mutates its inputs.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DataError, ParameterError, ShapeError

CANONICAL_ANGLES = (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)
DEFAULT_GAMMA = 2.2
DOP_EPS = 1e-8


class ExtremaMode(str, Enum):
    # imax = s0 + L/2, imin = s0 - L/2, as the formula is usually printed
    PAPER_LITERAL = "paper-literal"
    # imax = (s0 + L)/2, imin = (s0 - L)/2: true extrema of a capture sweep
    PHYS_CONSISTENT = "phys-consistent"


def _check_same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"shape mismatch: {sorted(shapes)}")


@dataclass(frozen=True)
class PolarStack:
    """Four co-registered captures behind analyzers at 0, 45, 90 and 135 degrees."""

    i0: np.ndarray
    i45: np.ndarray
    i90: np.ndarray
    i135: np.ndarray

    def __post_init__(self):
        _check_same_shape(self.i0, self.i45, self.i90, self.i135)

    @property
    def shape(self):
        return np.shape(self.i0)

    def channels(self):
        return (self.i0, self.i45, self.i90, self.i135)

    def as_array(self):
        """Stack as a (4, ...) array in 0/45/90/135 order."""
        return np.stack(self.channels())

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr)
        if arr.shape[0] != 4:
            raise ShapeError(f"expected 4 channels, got {arr.shape[0]}")
        return cls(arr[0], arr[1], arr[2], arr[3])

    def mean(self):
        return (self.i0 + self.i45 + self.i90 + self.i135) / 4.0

    def consistency_residual(self):
        """|(i0 + i90) - (i45 + i135)|; zero for ideal noise-free captures."""
        return np.abs((self.i0 + self.i90) - (self.i45 + self.i135))

    def validate(self):
        for name, ch in zip(("i0", "i45", "i90", "i135"), self.channels()):
            if not np.all(np.isfinite(ch)):
                raise DataError(f"non-finite values in channel {name}")
            if np.any(np.asarray(ch) < 0):
                raise DataError(f"negative intensity in channel {name}")
        return self


@dataclass(frozen=True)
class StokesMap:
    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray

    def __post_init__(self):
        _check_same_shape(self.s0, self.s1, self.s2)

    @property
    def shape(self):
        return np.shape(self.s0)

    def as_array(self):
        return np.stack((self.s0, self.s1, self.s2))

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr)
        if arr.shape[0] != 3:
            raise ShapeError(f"expected 3 Stokes planes, got {arr.shape[0]}")
        return cls(arr[0], arr[1], arr[2])

    def linear_magnitude(self):
        """L = sqrt(s1^2 + s2^2), the polarized part of the intensity."""
        return np.hypot(self.s1, self.s2)


@dataclass(frozen=True)
class ExtremaPair:
    imax: np.ndarray
    imin: np.ndarray
    mode: ExtremaMode


def stokes_from_stack(stack):
    """Linear Stokes parameters of a four-angle capture.

    Parameters
    ----------
    stack : PolarStack

    Returns
    -------
    StokesMap
        ``s0 = i0 + i90``, ``s1 = i0 - i90``, ``s2 = i45 - i135``.
    """
    for name, ch in zip(("i0", "i45", "i90", "i135"), stack.channels()):
        if not np.all(np.isfinite(ch)):
            raise DataError(f"non-finite values in channel {name}")
    i0, i45, i90, i135 = (np.asarray(c, dtype=np.float64) for c in stack.channels())
    return StokesMap(i0 + i90, i0 - i90, i45 - i135)


def capture_at_angle(st, alpha):
    """Intensity seen through an ideal linear analyzer at ``alpha`` radians."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim and alpha.shape != st.shape:
        raise ShapeError(f"angle map {alpha.shape} does not match Stokes map {st.shape}")
    return (st.s0 + st.s1 * np.cos(2 * alpha) + st.s2 * np.sin(2 * alpha)) / 2.0


def render_stack(st):
    """Captures at the four canonical analyzer angles."""
    return PolarStack(*(capture_at_angle(st, a) for a in CANONICAL_ANGLES))


def aop(st, return_mask=False):
    """Angle of linear polarization in [0, pi).

    Pixels with ``s1 == s2 == 0`` have no defined axis and get 0; pass
    ``return_mask=True`` to also receive a boolean map of valid pixels.
    """
    a = 0.5 * np.arctan2(st.s2, st.s1)
    a = np.mod(a, np.pi)
    # mod can round tiny negatives up to exactly pi
    a = np.where(a >= np.pi, 0.0, a)
    valid = (st.s1 != 0) | (st.s2 != 0)
    a = np.where(valid, a, 0.0)
    if return_mask:
        return a, valid
    return a


def dop(st, return_mask=False):
    """Degree of linear polarization, clamped to [0, 1]; 0 where s0 <= 1e-8."""
    s0 = np.asarray(st.s0, dtype=np.float64)
    valid = s0 > DOP_EPS
    safe = np.where(valid, s0, 1.0)
    d = np.where(valid, st.linear_magnitude() / safe, 0.0)
    d = np.clip(d, 0.0, 1.0)
    if return_mask:
        return d, valid
    return d


def extrema(st, mode=ExtremaMode.PHYS_CONSISTENT):
    mode = ExtremaMode(mode)
    L = st.linear_magnitude()
    if mode is ExtremaMode.PAPER_LITERAL:
        return ExtremaPair(st.s0 + L / 2.0, st.s0 - L / 2.0, mode)
    return ExtremaPair((st.s0 + L) / 2.0, (st.s0 - L) / 2.0, mode)


def malus_eval(ex, theta):
    """imax*cos^2(theta) + imin*sin^2(theta), theta measured from the polarization axis."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim and theta.shape != np.shape(ex.imax):
        raise ShapeError(f"angle map {theta.shape} does not match extrema {np.shape(ex.imax)}")
    c = np.cos(theta)
    s = np.sin(theta)
    return ex.imax * c * c + ex.imin * s * s


def gamma_correct(field, gamma=DEFAULT_GAMMA):
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    return np.power(np.clip(field, 0.0, 1.0), 1.0 / gamma)


def intensity_gt(stack, gamma=DEFAULT_GAMMA):
    """Gamma-corrected mean of the four captures (the display-domain intensity)."""
    stokes_from_stack(stack)  # validates finiteness
    return gamma_correct(stack.mean(), gamma)
