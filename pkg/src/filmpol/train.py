"""End-to-end training: schedule, Adam, batching, checkpoints and logs."""
import json
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, FormatError, TrainingAborted
from .nets import FilmRemovalModel, PipelineMode, batch_features
from .polar import DEFAULT_GAMMA, gamma_correct

CKPT_MAGIC = b"PFCK"
CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    decay_factor: float = 0.5
    decay_interval: int = 20000
    batch_size: int = 4
    crop: int = 16
    flips: bool = True
    max_iters: int = 5000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gamma: float = DEFAULT_GAMMA
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("lr", "decay_factor", "eps", "gamma"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"{name} must be positive, got {v!r}", name)
        for name in ("decay_interval", "batch_size", "crop"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}", name)
        for name in ("max_iters", "seed", "checkpoint_every"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}", name)
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not 0 <= v < 1:
                raise ConfigError(f"{name} must lie in [0, 1), got {v!r}", name)

    @classmethod
    def from_dict(cls, d, where="train"):
        known = {f.name for f in fields(cls)}
        if not isinstance(d, dict):
            raise ConfigError(f"{where} must be an object", where)
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown field '{where}.{key}'", f"{where}.{key}")
        try:
            return cls(**d)
        except ConfigError as err:
            raise ConfigError(f"{where}.{err.field}: {err}", f"{where}.{err.field}") from None

    def to_dict(self):
        return asdict(self)


def lr_at(iteration, cfg=TrainConfig()):
    """Step schedule: base rate halved (by ``decay_factor``) every ``decay_interval`` iterations."""
    if iteration < 0:
        raise ConfigError(f"iteration must be non-negative, got {iteration}", "iteration")
    return cfg.lr * cfg.decay_factor ** (int(iteration) // int(cfg.decay_interval))


def display_target(gt, gamma=DEFAULT_GAMMA):
    """Clean-scene intensity as the network should output it.

    The film-free captures each carry half of the diffuse light, so their
    mean is ``gt / 2``; the target is that mean after gamma correction.
    """
    return gamma_correct(np.asarray(gt) / 2.0, gamma)


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            dt = p.data.dtype
            m, v = self.m[k], self.v[k]
            m *= dt.type(b1)
            m += dt.type(1.0 - b1) * g
            v *= dt.type(b2)
            v += dt.type(1.0 - b2) * (g * g)
            upd = (m / dt.type(c1)) / (np.sqrt(v / dt.type(c2)) + dt.type(self.eps))
            p.data -= dt.type(lr) * upd

    def state(self):
        return self.t, self.m, self.v


class BatchSampler:
    """Epoch-shuffled random crops, optionally mirrored.

    A mirror flips the handedness of every polarization angle, which swaps
    the 45 and 135 degree captures; the flip is applied that way so the
    batch stays physically consistent.
    """

    def __init__(self, dataset, cfg):
        self.data = dataset
        self.cfg = cfg
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xBA7C]))
        self._order = np.zeros(0, dtype=np.int64)
        self._pos = 0
        _, _, h, w = dataset.captures.shape
        self.crop = min(cfg.crop, h, w)

    def _next_indices(self, k):
        out = []
        while len(out) < k:
            if self._pos >= len(self._order):
                self._order = self.rng.permutation(len(self.data))
                self._pos = 0
            take = min(k - len(out), len(self._order) - self._pos)
            out.extend(self._order[self._pos:self._pos + take].tolist())
            self._pos += take
        return out

    def next(self):
        cfg = self.cfg
        idx = self._next_indices(cfg.batch_size)
        _, _, h, w = self.data.captures.shape
        c = self.crop
        caps, gts, info = [], [], []
        for i in idx:
            y = int(self.rng.integers(0, h - c + 1))
            x = int(self.rng.integers(0, w - c + 1))
            cap = self.data.captures[i, :, y:y + c, x:x + c]
            gt = self.data.gt[i, y:y + c, x:x + c]
            fh = fv = False
            if cfg.flips:
                fh, fv = bool(self.rng.random() < 0.5), bool(self.rng.random() < 0.5)
                if fh:
                    cap, gt = cap[:, :, ::-1], gt[:, ::-1]
                if fv:
                    cap, gt = cap[:, ::-1, :], gt[::-1, :]
                if fh != fv:
                    cap = cap[[0, 3, 2, 1]]
            caps.append(np.ascontiguousarray(cap))
            gts.append(np.ascontiguousarray(gt))
            info.append({"index": int(i), "id": self.data.ids[i], "y": y, "x": x,
                         "flip_h": fh, "flip_v": fv})
        return np.stack(caps), np.stack(gts), info


@dataclass
class TrainResult:
    model: FilmRemovalModel
    optimizer: Adam
    losses: list
    iterations: int
    angle_drift: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def train(cfg, dataset, mode=PipelineMode.FULL, anet_desc=None, rnet_desc=None,
          log_path=None, ckpt_dir=None, dump_dir=None, model=None):
    """Joint A-Net/R-Net training on L1 loss against :func:`display_target`.

    Deterministic given ``cfg.seed``, the config and the dataset. Writes one
    JSON line per iteration to ``log_path`` and periodic checkpoints to
    ``ckpt_dir`` when given. A non-finite loss raises :class:`TrainingAborted`
    with the offending batch described (and dumped to ``dump_dir``).
    """
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset", "dataset")
    if model is None:
        model = FilmRemovalModel(mode, anet_desc, rnet_desc, seed=cfg.seed)
    opt = Adam(model.params, cfg.beta1, cfg.beta2, cfg.eps)
    sampler = BatchSampler(dataset, cfg)
    losses, drift, ckpts = [], [], []
    log = open(log_path, "a") if log_path else None
    t0 = time.perf_counter()
    try:
        for it in range(cfg.max_iters):
            caps, gts, info = sampler.next()
            feats = batch_features(caps)
            target = display_target(gts, cfg.gamma)[:, None].astype(model.dtype)
            rec, angle, _ = model(feats)
            loss = ad.l1_loss(rec, target)
            value = float(loss.item())
            if not np.isfinite(value):
                diag = {"iteration": it, "loss": value, "batch": info}
                if dump_dir is not None:
                    Path(dump_dir).mkdir(parents=True, exist_ok=True)
                    np.savez(Path(dump_dir) / f"abort_iter{it}.npz", captures=caps, gt=gts)
                    diag["dump"] = str(Path(dump_dir) / f"abort_iter{it}.npz")
                raise TrainingAborted(f"non-finite loss {value} at iteration {it}", diag)
            model.zero_grad()
            loss.backward()
            lr = lr_at(it, cfg)
            opt.step(lr)
            losses.append(value)
            if angle is not None:
                drift.append(float(np.mean(np.abs(angle.data - np.pi / 2))))
            if log is not None:
                log.write(json.dumps({"iter": it, "loss": value, "lr": lr,
                                      "wall": round(time.perf_counter() - t0, 4)}) + "\n")
            if ckpt_dir is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                p = Path(ckpt_dir) / f"ckpt_{it + 1:07d}.pfck"
                save_checkpoint(p, model, opt, it + 1, cfg)
                ckpts.append(str(p))
    finally:
        if log is not None:
            log.close()
    if ckpt_dir is not None:
        p = Path(ckpt_dir) / "final.pfck"
        save_checkpoint(p, model, opt, cfg.max_iters, cfg)
        ckpts.append(str(p))
    return TrainResult(model, opt, losses, cfg.max_iters, drift, ckpts)


def predict(model, captures, chunk=4):
    """Reconstructions, angles and priors for full images, without a graph."""
    captures = np.asarray(captures, dtype=np.float64)
    recs, angles, priors = [], [], []
    with ad.no_grad():
        for s in range(0, len(captures), chunk):
            feats = batch_features(captures[s:s + chunk])
            rec, angle, prior = model(feats)
            recs.append(rec.data[:, 0])
            if angle is not None:
                angles.append(angle.data[:, 0])
                priors.append(prior.data[:, 0])
    out = {"rec": np.concatenate(recs)}
    if angles:
        out["angle"] = np.concatenate(angles)
        out["prior"] = np.concatenate(priors)
    return out


# --- checkpoints -----------------------------------------------------------

def _blob(name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    nb = name.encode()
    return (struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
            + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes())


def checkpoint_bytes(model, optimizer=None, iteration=0, cfg=None):
    header = {
        "descriptor": model.descriptor(),
        "iteration": int(iteration),
        "adam_step": int(optimizer.t) if optimizer is not None else 0,
        "train": cfg.to_dict() if cfg is not None else None,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    blobs = [(k, p.data) for k, p in model.params.items()]
    if optimizer is not None:
        blobs += [(f"adam.m.{k}", optimizer.m[k]) for k in model.params]
        blobs += [(f"adam.v.{k}", optimizer.v[k]) for k in model.params]
    out = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(hb)), hb,
           struct.pack("<I", len(blobs))]
    out += [_blob(k, a) for k, a in blobs]
    return b"".join(out)


def save_checkpoint(path, model, optimizer=None, iteration=0, cfg=None):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(checkpoint_bytes(model, optimizer, iteration, cfg))


def parse_checkpoint(buf, where="<bytes>"):
    """(header dict, {name: float32 array}) from checkpoint bytes."""
    if buf[:4] != CKPT_MAGIC:
        raise FormatError(f"{where}: not a filmpol checkpoint")
    try:
        version, hlen = struct.unpack_from("<HI", buf, 4)
        if version != CKPT_VERSION:
            raise FormatError(f"{where}: unsupported checkpoint version {version}")
        off = 10
        header = json.loads(buf[off:off + hlen])
        off += hlen
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        blobs = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + nlen].decode()
            off += nlen
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            if off + 4 * n > len(buf):
                raise FormatError(f"{where}: truncated blob {name}")
            blobs[name] = np.frombuffer(buf, "<f4", n, off).reshape(dims).astype(np.float32)
            off += 4 * n
    except (struct.error, ValueError, UnicodeDecodeError) as err:
        raise FormatError(f"{where}: corrupt checkpoint ({err})") from None
    if off != len(buf):
        raise FormatError(f"{where}: {len(buf) - off} trailing bytes")
    return header, blobs


def model_from_header(header):
    desc = header["descriptor"]
    mode = PipelineMode(desc["mode"])
    strip = ("in_channels", "head")
    a = {k: v for k, v in desc.get("anet", {}).items() if k not in strip} or None
    r = {k: v for k, v in desc["rnet"].items() if k not in strip}
    return FilmRemovalModel(mode, a, r, seed=0)


def load_checkpoint(path, with_optimizer=False):
    """Rebuild the model (and optionally Adam state) from a checkpoint file."""
    try:
        buf = Path(path).read_bytes()
    except OSError as err:
        raise FormatError(f"cannot read checkpoint {path}: {err.strerror}") from None
    header, blobs = parse_checkpoint(buf, str(path))
    model = model_from_header(header)
    model.load_state_dict({k: v for k, v in blobs.items() if not k.startswith("adam.")})
    if not with_optimizer:
        return model, header
    opt = Adam(model.params)
    opt.t = header.get("adam_step", 0)
    for k in model.params:
        if f"adam.m.{k}" in blobs:
            opt.m[k] = blobs[f"adam.m.{k}"].copy()
            opt.v[k] = blobs[f"adam.v.{k}"].copy()
    return model, header, opt
