"""Image quality metrics: PSNR and Gaussian-window SSIM."""
import numpy as np
from scipy.ndimage import correlate1d

from .errors import ParameterError, ShapeError

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
U16_PEAK_OFFSET_DB = 20.0 * np.log10(65535.0)


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=1.0):
    """10 log10(peak^2 / MSE) in dB; ``inf`` when the images are identical."""
    a, b = _pair(a, b)
    if not peak > 0:
        raise ParameterError(f"peak must be positive, got {peak}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter(x, g):
    # separable valid-mode Gaussian average
    h = correlate1d(x, g, axis=0, mode="constant")
    h = correlate1d(h, g, axis=1, mode="constant")
    r = len(g) // 2
    return h[r:x.shape[0] - r, r:x.shape[1] - r]


def ssim_map(a, b, peak=1.0, win=SSIM_WIN, sigma=SSIM_SIGMA, k1=SSIM_K1, k2=SSIM_K2):
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ShapeError(f"ssim expects 2-D images, got shape {a.shape}")
    if min(a.shape) < win:
        raise ShapeError(f"image {a.shape} is smaller than the {win}x{win} SSIM window")
    g = gaussian_window(win, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mu_a, mu_b = _filter(a, g), _filter(b, g)
    saa = _filter(a * a, g) - mu_a * mu_a
    sbb = _filter(b * b, g) - mu_b * mu_b
    sab = _filter(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return num / den


def ssim(a, b, peak=1.0, **kw):
    """Mean local SSIM (Gaussian window 11, sigma 1.5, K1 0.01, K2 0.03).

    Identical inputs score exactly 1.0: every local term then has equal
    numerator and denominator, so the ratio is computed as 1 bit-exactly.
    """
    return float(np.mean(ssim_map(a, b, peak, **kw)))
