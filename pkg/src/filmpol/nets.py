"""Residual dense networks for angle estimation and reconstruction, and the
end-to-end film-removal model that wires them through the Malus prior."""
from collections import OrderedDict
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError, StateError
from .polar import ExtremaMode

# keeps float32 outputs strictly below pi after rounding
ANGLE_SCALE = np.pi * (1.0 - 1e-6)


class HeadKind(str, Enum):
    ANGLE = "angle"  # pi * sigmoid -> [0, pi)
    UNIT = "unit"    # sigmoid -> [0, 1]


@dataclass(frozen=True)
class NetDescriptor:
    in_channels: int
    head: HeadKind = HeadKind.UNIT
    blocks: int = 3        # D
    convs: int = 4         # C, per dense block
    growth: int = 8        # G
    features: int = 16     # F
    head_init: str = "kaiming"   # "kaiming", "small" (x0.01) or "zero"

    def __post_init__(self):
        object.__setattr__(self, "head", HeadKind(self.head))
        for name in ("in_channels", "blocks", "convs", "growth", "features"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}", name)
        if self.head_init not in ("kaiming", "small", "zero"):
            raise ConfigError(f"unknown head_init {self.head_init!r}", "head_init")

    def to_dict(self):
        d = asdict(self)
        d["head"] = self.head.value
        return d


def _conv_params(c_in, c_out, k):
    return c_out * c_in * k * k + c_out


def param_count(desc):
    """Closed-form parameter count of :func:`build_rdn` for ``desc``."""
    F, G, C, D = desc.features, desc.growth, desc.convs, desc.blocks
    block = sum(_conv_params(F + j * G, G, 3) for j in range(C)) + _conv_params(F + C * G, F, 1)
    return (_conv_params(desc.in_channels, F, 3) + _conv_params(F, F, 3) + D * block
            + _conv_params(D * F, F, 1) + _conv_params(F, F, 3) + _conv_params(F, 1, 3))


class Network:
    """Residual dense network: shallow features, D dense blocks with local
    fusion and residuals, global fusion with a global residual, and a
    sigmoid-scaled single-channel head."""

    def __init__(self, desc, params):
        self.desc = desc
        self.params = params
        self._recorded = False

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def layers(self):
        """Layer list as (name, kind, in_channels, out_channels) in execution order."""
        d = self.desc
        F, G = d.features, d.growth
        out = [("sfe1", "conv3x3", d.in_channels, F), ("sfe2", "conv3x3", F, F)]
        for i in range(d.blocks):
            for j in range(d.convs):
                out.append((f"rdb{i}.conv{j}", "conv3x3+relu+concat", F + j * G, G))
            out.append((f"rdb{i}.lff", "conv1x1+add", F + d.convs * G, F))
        out += [("gff1", "conv1x1", d.blocks * F, F), ("gff2", "conv3x3+add", F, F),
                ("head", f"conv3x3+{d.head.value}", F, 1)]
        return out

    def num_params(self):
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def _conv(self, name, x):
        return ad.conv2d(x, self.params[name + ".weight"], self.params[name + ".bias"])

    def forward(self, x):
        if not isinstance(x, ad.Tensor):
            x = ad.Tensor(x)
        if x.ndim != 4 or x.shape[1] != self.desc.in_channels:
            raise ShapeError(f"network expects (N, {self.desc.in_channels}, H, W) input, "
                             f"got {x.shape}")
        d = self.desc
        f1 = self._conv("sfe1", x)
        h = self._conv("sfe2", f1)
        block_outs = []
        for i in range(d.blocks):
            feats = h
            for j in range(d.convs):
                g = ad.relu(self._conv(f"rdb{i}.conv{j}", feats))
                feats = ad.concat([feats, g])
            h = self._conv(f"rdb{i}.lff", feats) + h
            block_outs.append(h)
        g = self._conv("gff1", ad.concat(block_outs))
        g = self._conv("gff2", g) + f1
        z = ad.sigmoid(self._conv("head", g))
        if d.head is HeadKind.ANGLE:
            z = z * ANGLE_SCALE
        self._recorded = self._recorded or z.requires_grad
        return z

    __call__ = forward

    def backward(self, loss):
        """Fill ``.grad`` of every parameter from ``loss`` and return them by name.

        A loss that carries no graph (a detached constant) yields all-zero
        gradients; calling this before any recorded forward pass is an error.
        """
        if not self._recorded:
            raise StateError("backward() called before a recorded forward pass")
        self.zero_grad()
        if isinstance(loss, ad.Tensor) and loss.requires_grad:
            loss.backward()
        for p in self.params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        return OrderedDict((k, p.grad) for k, p in self.params.items())

    def state_dict(self):
        return OrderedDict((k, p.data.copy()) for k, p in self.params.items())

    def load_state_dict(self, state):
        if set(state) != set(self.params):
            missing = set(self.params) - set(state)
            extra = set(state) - set(self.params)
            raise ShapeError(f"parameter names differ: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for k, p in self.params.items():
            v = np.asarray(state[k])
            if v.shape != p.data.shape:
                raise ShapeError(f"parameter {k}: shape {v.shape} != {p.data.shape}")
            p.data = v.astype(p.dtype, copy=True)


def build_rdn(desc, seed=0, dtype=np.float32):
    """Kaiming fan-in normal weights and zero biases from ``seed``."""
    rng = np.random.default_rng(seed)
    params = OrderedDict()

    def conv(name, c_in, c_out, k, init="kaiming"):
        fan_in = c_in * k * k
        w = rng.standard_normal((c_out, c_in, k, k)) * np.sqrt(2.0 / fan_in)
        if init == "small":
            w = w * 0.01
        elif init == "zero":
            w = np.zeros_like(w)
        params[name + ".weight"] = ad.Tensor(w.astype(dtype), requires_grad=True,
                                             name=name + ".weight")
        params[name + ".bias"] = ad.Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True,
                                           name=name + ".bias")

    F, G = desc.features, desc.growth
    conv("sfe1", desc.in_channels, F, 3)
    conv("sfe2", F, F, 3)
    for i in range(desc.blocks):
        for j in range(desc.convs):
            conv(f"rdb{i}.conv{j}", F + j * G, G, 3)
        conv(f"rdb{i}.lff", F + desc.convs * G, F, 1)
    conv("gff1", desc.blocks * F, F, 1)
    conv("gff2", F, F, 3)
    conv("head", F, 1, 3, init=desc.head_init)
    return Network(desc, params)


def build_anet(blocks=3, convs=4, growth=8, features=16, in_channels=6,
               head_init="small", seed=0, dtype=np.float32):
    """Angle network: four captures, AoP and DoP in, per-pixel angle in [0, pi) out."""
    desc = NetDescriptor(in_channels, HeadKind.ANGLE, blocks, convs, growth, features, head_init)
    return build_rdn(desc, seed, dtype)


def build_rnet(blocks=3, convs=4, growth=8, features=16, in_channels=5,
               head_init="kaiming", seed=0, dtype=np.float32):
    """Reconstruction network: four captures and the prior in, clean intensity in [0, 1] out."""
    desc = NetDescriptor(in_channels, HeadKind.UNIT, blocks, convs, growth, features, head_init)
    return build_rdn(desc, seed, dtype)


class PipelineMode(str, Enum):
    FULL = "full"
    NO_PRIOR = "no-prior"        # four captures straight into R-Net
    NO_AOP_DOP = "no-aop-dop"    # A-Net sees only the four captures
    NO_POLAR = "no-polar"        # R-Net sees only the mean intensity


def plm_tensor(imax, imin, angle):
    """Differentiable imax*cos^2(A) + imin*sin^2(A)."""
    return imax * ad.square(ad.cos(angle)) + imin * ad.square(ad.sin(angle))


class FilmRemovalModel:
    """A-Net -> Malus prior -> R-Net, or one of the ablated wirings.

    Inputs are batches of precomputed features (see :func:`batch_features`).
    Parameter names carry an ``anet.``/``rnet.`` prefix.
    """

    def __init__(self, mode=PipelineMode.FULL, anet_desc=None, rnet_desc=None, seed=0,
                 dtype=np.float32):
        self.mode = PipelineMode(mode)
        arch = dict(blocks=3, convs=4, growth=8, features=16)
        a_kw = dict(arch, **(anet_desc or {}))
        r_kw = dict(arch, **(rnet_desc or {}))
        child = np.random.SeedSequence(int(seed)).spawn(2)
        a_seed, r_seed = (int(c.generate_state(1)[0]) for c in child)
        self.anet = None
        if self.mode in (PipelineMode.FULL, PipelineMode.NO_AOP_DOP):
            a_in = 6 if self.mode is PipelineMode.FULL else 4
            a_kw.setdefault("head_init", "small")
            self.anet = build_rdn(NetDescriptor(a_in, HeadKind.ANGLE, **a_kw), a_seed, dtype)
        r_in = {PipelineMode.FULL: 5, PipelineMode.NO_AOP_DOP: 5,
                PipelineMode.NO_PRIOR: 4, PipelineMode.NO_POLAR: 1}[self.mode]
        self.rnet = build_rdn(NetDescriptor(r_in, HeadKind.UNIT, **r_kw), r_seed, dtype)

    @property
    def dtype(self):
        return self.rnet.dtype

    def nets(self):
        out = OrderedDict()
        if self.anet is not None:
            out["anet"] = self.anet
        out["rnet"] = self.rnet
        return out

    @property
    def params(self):
        out = OrderedDict()
        for prefix, net in self.nets().items():
            for k, p in net.params.items():
                out[f"{prefix}.{k}"] = p
        return out

    def descriptor(self):
        return {"mode": self.mode.value,
                **{k: net.desc.to_dict() for k, net in self.nets().items()}}

    def angle(self, feats):
        """A-Net output tensor, or None for wirings without A-Net."""
        if self.anet is None:
            return None
        caps = feats["captures"]
        x = caps if self.mode is PipelineMode.NO_AOP_DOP else np.concatenate(
            [caps, feats["aop"], feats["dop"]], axis=1)
        return self.anet(ad.Tensor(x.astype(self.dtype, copy=False)))

    def prior(self, feats, angle):
        return plm_tensor(ad.Tensor(feats["imax"].astype(self.dtype, copy=False)),
                          ad.Tensor(feats["imin"].astype(self.dtype, copy=False)), angle)

    def reconstruct(self, feats, prior=None):
        caps = feats["captures"].astype(self.dtype, copy=False)
        if self.mode is PipelineMode.NO_POLAR:
            x = ad.Tensor(caps.mean(axis=1, keepdims=True))
        elif self.mode is PipelineMode.NO_PRIOR:
            x = ad.Tensor(caps)
        else:
            if prior is None:
                raise StateError(f"mode {self.mode.value} needs a prior")
            x = ad.concat([ad.Tensor(caps), prior])
        return self.rnet(x)

    def forward(self, feats):
        """Returns (reconstruction, angle or None, prior or None) tensors."""
        angle = self.angle(feats)
        prior = self.prior(feats, angle) if angle is not None else None
        return self.reconstruct(feats, prior), angle, prior

    __call__ = forward

    def zero_grad(self):
        for net in self.nets().values():
            net.zero_grad()

    def state_dict(self):
        return OrderedDict((k, p.data.copy()) for k, p in self.params.items())

    def load_state_dict(self, state):
        for prefix, net in self.nets().items():
            sub = {k[len(prefix) + 1:]: v for k, v in state.items() if k.startswith(prefix + ".")}
            net.load_state_dict(sub)
        known = set(self.params)
        extra = set(state) - known
        if extra:
            raise ShapeError(f"unexpected parameters {sorted(extra)}")


def batch_features(captures):
    """Network inputs derived from a batch of captures (N, 4, H, W).

    Returns a dict with ``captures``, ``aop`` (scaled to [0, 1) by 1/pi),
    ``dop``, ``imax`` and ``imin`` (physically consistent extrema), all float64
    with a singleton channel axis where applicable.
    """
    from .polar import StokesMap, aop, dop, extrema

    caps = np.asarray(captures, dtype=np.float64)
    if caps.ndim != 4 or caps.shape[1] != 4:
        raise ShapeError(f"captures must be (N, 4, H, W), got {caps.shape}")
    i0, i45, i90, i135 = caps[:, 0], caps[:, 1], caps[:, 2], caps[:, 3]
    st = StokesMap(i0 + i90, i0 - i90, i45 - i135)
    ex = extrema(st, ExtremaMode.PHYS_CONSISTENT)
    return {
        "captures": caps,
        "aop": (aop(st) / np.pi)[:, None],
        "dop": dop(st)[:, None],
        "imax": ex.imax[:, None],
        "imin": ex.imin[:, None],
    }
