"""Procedural forward model of a product photographed through wrinkled film.

A scene is the clean diffuse image ``im``, an additive film degradation
``id_field`` (transmittance loss plus crease texture) and a partially
polarized specular highlight described by its intensity, degree and axis of
linear polarization. Rendering composes them as Stokes vectors and samples
the four analyzer angles, so every decomposition is known exactly.
"""
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, ShapeError
from .polar import CANONICAL_ANGLES, StokesMap, capture_at_angle, PolarStack

_STREAMS = ("content", "film", "wrinkles", "texture", "noise")


class ContentKind(str, Enum):
    QR = "qr"
    TEXT = "text"
    PRODUCT = "product"


@dataclass(frozen=True)
class SceneConfig:
    width: int = 64
    height: int = 64
    content: ContentKind = ContentKind.QR
    wrinkle_density: float = 2.0          # expected ridges per 64x64 area
    highlight_strength: float = 0.5       # peak highlight s0, at most 0.5
    transmittance: tuple = (0.7, 0.95)
    texture_amplitude: float = 0.04
    noise_sigma: float = 0.002
    dolp_range: tuple = (0.6, 0.95)
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "content", ContentKind(self.content))
        except ValueError:
            raise ConfigError(f"content must be one of {[k.value for k in ContentKind]}, "
                              f"got {self.content!r}", "content") from None
        object.__setattr__(self, "transmittance", tuple(float(v) for v in self.transmittance))
        object.__setattr__(self, "dolp_range", tuple(float(v) for v in self.dolp_range))
        self._validate()

    def _validate(self):
        for name in ("width", "height"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 16 or v % 2 or v > 4096:
                raise ConfigError(f"{name} must be an even integer in [16, 4096], got {v!r}", name)
        bounds = {
            "wrinkle_density": (0.0, 20.0),
            "highlight_strength": (0.0, 0.5),
            "texture_amplitude": (0.0, 0.1),
            "noise_sigma": (0.0, 0.1),
        }
        for name, (lo, hi) in bounds.items():
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not lo <= v <= hi:
                raise ConfigError(f"{name} must lie in [{lo}, {hi}], got {v!r}", name)
        t_lo, t_hi = self.transmittance if len(self.transmittance) == 2 else (None, None)
        if t_lo is None or not 0.5 <= t_lo <= t_hi <= 1.0:
            raise ConfigError(f"transmittance must be (lo, hi) with 0.5 <= lo <= hi <= 1, "
                              f"got {self.transmittance!r}", "transmittance")
        d_lo, d_hi = self.dolp_range if len(self.dolp_range) == 2 else (None, None)
        if d_lo is None or not 0.0 <= d_lo <= d_hi <= 1.0:
            raise ConfigError(f"dolp_range must be (lo, hi) within [0, 1], "
                              f"got {self.dolp_range!r}", "dolp_range")
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}", "seed")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["content"] = self.content.value
        d["transmittance"] = list(self.transmittance)
        d["dolp_range"] = list(self.dolp_range)
        return d

    @classmethod
    def from_dict(cls, d, where="scene"):
        if not isinstance(d, dict):
            raise ConfigError(f"{where} must be an object", where)
        known = {f.name for f in dataclasses.fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown field '{where}.{key}'", f"{where}.{key}")
        try:
            return cls(**d)
        except ConfigError as err:
            raise ConfigError(f"{where}.{err.field}: {err}", f"{where}.{err.field}") from None
        except TypeError as err:
            raise ConfigError(f"{where}: {err}", where) from None

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class FilmScene:
    im: np.ndarray
    id_field: np.ndarray
    hl_s0: np.ndarray
    hl_dolp: np.ndarray
    hl_phi: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.im.shape

    def diffuse(self):
        """U = clamp(im + id_field, 0, 1): the film-degraded diffuse light."""
        return np.clip(self.im + self.id_field, 0.0, 1.0)

    def stokes(self):
        u = self.diffuse()
        pol = self.hl_s0 * self.hl_dolp
        return StokesMap(u + self.hl_s0, pol * np.cos(2 * self.hl_phi),
                         pol * np.sin(2 * self.hl_phi))


def _streams(seed):
    children = np.random.SeedSequence(int(seed)).spawn(len(_STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(_STREAMS, children)}


def _unit_noise(rng, shape, sigma):
    f = gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    s = f.std()
    return f / s if s > 0 else f


def _rescale(f, lo, hi):
    span = np.ptp(f)
    if span == 0:
        return np.full_like(f, (lo + hi) / 2)
    return lo + (hi - lo) * (f - f.min()) / span


def _content_qr(rng, h, w):
    lo, hi = rng.uniform(0.05, 0.2), rng.uniform(0.7, 0.9)
    n_mod = 21
    px = max(1, min(h, w) // (n_mod + 4))
    bits = rng.random((n_mod, n_mod)) < 0.5
    finder = np.zeros((7, 7), dtype=bool)
    finder[[0, -1], :] = finder[:, [0, -1]] = True
    finder[2:5, 2:5] = True
    for r, c in ((0, 0), (0, n_mod - 8), (n_mod - 8, 0)):
        bits[r:r + 8, c:c + 8] = False  # finder plus separator
    for r, c in ((0, 0), (0, n_mod - 7), (n_mod - 7, 0)):
        bits[r:r + 7, c:c + 7] = finder
    code = np.kron(bits, np.ones((px, px), dtype=bool))
    img = np.full((h, w), hi)
    oy, ox = (h - code.shape[0]) // 2, (w - code.shape[1]) // 2
    img[oy:oy + code.shape[0], ox:ox + code.shape[1]] = np.where(code, lo, hi)
    return img


def _content_text(rng, h, w):
    lo, hi = rng.uniform(0.05, 0.25), rng.uniform(0.7, 0.9)
    s = max(1, h // 32)
    gh, gw = 5 * s, 3 * s
    img = np.full((h, w), hi)
    y = s * 2
    while y + gh <= h - s:
        x = s * 2
        while x + gw <= w - s:
            if rng.random() < 0.15:  # word gap
                x += gw + s
                continue
            glyph = rng.random((5, 3)) < 0.5
            glyph[rng.integers(5), :] = True
            img[y:y + gh, x:x + gw] = np.where(np.kron(glyph, np.ones((s, s), bool)), lo, hi)
            x += gw + s
        y += gh + 2 * s
    return img


def _content_product(rng, h, w):
    img = 0.5 + 0.12 * _unit_noise(rng, (h, w), max(h, w) / 8)
    for _ in range(int(rng.integers(2, 5))):
        y0, x0 = rng.integers(0, h - 4), rng.integers(0, w - 4)
        y1 = min(h, y0 + int(rng.integers(4, h // 2)))
        x1 = min(w, x0 + int(rng.integers(4, w // 2)))
        img[y0:y1, x0:x1] = rng.uniform(0.1, 0.9)
    img += 0.03 * _unit_noise(rng, (h, w), 1.0)
    return np.clip(img, 0.05, 0.95)


_CONTENT = {ContentKind.QR: _content_qr, ContentKind.TEXT: _content_text,
            ContentKind.PRODUCT: _content_product}


def _wrinkles(rng, cfg):
    """Ridge geometry -> (highlight lobe, crease mask, dolp, phi)."""
    h, w = cfg.height, cfg.width
    lobe = np.zeros((h, w))
    crease = np.zeros((h, w))
    dolp = np.zeros((h, w))
    phi = np.zeros((h, w))
    if cfg.wrinkle_density == 0:
        return lobe, crease, dolp, phi
    n = max(1, int(rng.poisson(cfg.wrinkle_density * h * w / 4096.0)))
    light = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(n):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        psi = rng.uniform(0, np.pi)  # ridge normal direction
        width = rng.uniform(1.5, 4.0)
        amp = rng.uniform(0.0, 6.0)
        freq = rng.uniform(0.05, 0.3)
        phase = rng.uniform(0, 2 * np.pi)
        ell = rng.uniform(0.3, 0.8) * max(h, w)
        ridge_dolp = rng.uniform(*cfg.dolp_range)
        ridge_phi = np.mod(psi + np.pi / 2 + rng.normal(0, 0.1), np.pi)

        nx, ny = np.cos(psi), np.sin(psi)
        t = -(xx - cx) * ny + (yy - cy) * nx
        d = (xx - cx) * nx + (yy - cy) * ny - amp * np.sin(freq * t + phase)
        env = np.exp(-t * t / (2 * ell * ell))
        height = np.exp(-d * d / (2 * width * width)) * env
        # signed slope in [-1, 1]; the flank facing the light gets the highlight
        slope = (d / width) * np.exp(0.5 - d * d / (2 * width * width))
        facing = 1.0 if np.cos(psi - light) >= 0 else -1.0
        rl = np.clip(facing * slope, 0.0, 1.0) ** 2 * env

        take = rl > lobe
        lobe = np.where(take, rl, lobe)
        dolp = np.where(take, ridge_dolp, dolp)
        phi = np.where(take, ridge_phi, phi)
        crease = np.maximum(crease, height)
    phi = np.where(phi >= np.pi, 0.0, phi)
    return lobe, crease, dolp, phi


def generate_scene(cfg):
    """Deterministic scene for ``cfg`` (same config and seed, same bits)."""
    if not isinstance(cfg, SceneConfig):
        raise ConfigError("generate_scene expects a SceneConfig")
    rngs = _streams(cfg.seed)
    h, w = cfg.height, cfg.width
    im = _CONTENT[cfg.content](rngs["content"], h, w)

    t_lo, t_hi = cfg.transmittance
    trans = _rescale(_unit_noise(rngs["film"], (h, w), max(h, w) / 4), t_lo, t_hi)

    lobe, crease, dolp, phi = _wrinkles(rngs["wrinkles"], cfg)
    texture = cfg.texture_amplitude * _unit_noise(rngs["texture"], (h, w), 1.0) * crease

    id_field = (trans - 1.0) * im + texture
    id_field = np.clip(im + id_field, 0.0, 1.0) - im
    id_field = np.clip(id_field, -0.5, 0.5)

    hl_s0 = cfg.highlight_strength * lobe
    hl_dolp = np.where(hl_s0 > 0, dolp, 0.0)
    hl_phi = np.where(hl_s0 > 0, phi, 0.0)
    meta = {"config": cfg.to_dict(), "texture": texture, "transmittance": trans}
    return FilmScene(im, id_field, hl_s0, hl_dolp, hl_phi, cfg.seed, meta)


def render_captures(scene, noise_sigma=None):
    """Four analyzer captures and the clean ground truth ``im``.

    Noise is i.i.d. Gaussian per capture, drawn from the scene's own seed
    stream, followed by a clamp to [0, 1].
    """
    if noise_sigma is None:
        noise_sigma = scene.meta.get("config", {}).get("noise_sigma", 0.0)
    for name in ("id_field", "hl_s0", "hl_dolp", "hl_phi"):
        if getattr(scene, name).shape != scene.im.shape:
            raise ShapeError(f"scene field {name} has shape {getattr(scene, name).shape}, "
                             f"expected {scene.im.shape}")
    st = scene.stokes()
    caps = [capture_at_angle(st, a) for a in CANONICAL_ANGLES]
    if noise_sigma > 0:
        rng = _streams(scene.seed)["noise"]
        caps = [c + rng.normal(0.0, noise_sigma, c.shape) for c in caps]
    caps = [np.clip(c, 0.0, 1.0) for c in caps]
    return PolarStack(*caps), scene.im.copy()
