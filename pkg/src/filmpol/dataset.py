"""Paired synthetic datasets: generation, manifests, replay and loading."""
import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, DataError, FormatError
from .mosaic import DemosaicMethod, RawMosaic, demosaic, from_uint16, mosaic, to_uint16
from .sim import SceneConfig, generate_scene, render_captures

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


def sample_seed(base_seed, index):
    """Per-sample seed; depends only on (base_seed, index)."""
    ss = np.random.SeedSequence([int(base_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def configs_digest(configs):
    h = hashlib.sha256()
    for c in configs:
        h.update(c.digest().encode())
    return h.hexdigest()


@dataclass
class Dataset:
    """In-memory paired samples: captures (N, 4, H, W) and clean ``im`` (N, H, W)."""

    ids: list
    captures: np.ndarray
    gt: np.ndarray

    def __len__(self):
        return len(self.ids)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset([self.ids[i] for i in idx], self.captures[idx], self.gt[idx])


def render_sample(cfg):
    """(stack, quantized gt, raw mosaic) for one scene config."""
    scene = generate_scene(cfg)
    stack, gt = render_captures(scene)
    gt16 = to_uint16(gt)
    raw16 = to_uint16(mosaic(stack).data)
    return stack, gt16, raw16


def _config_for(configs, base_seed, index):
    base = configs[index % len(configs)]
    d = base.to_dict()
    d["seed"] = sample_seed(base_seed, index)
    return SceneConfig(**d)


def synthesize(configs, count, seed):
    """Same samples :func:`make_dataset` would write, kept in memory."""
    configs = list(configs)
    caps, gts, ids = [], [], []
    for i in range(count):
        stack, gt16, _ = render_sample(_config_for(configs, seed, i))
        caps.append(stack.as_array())
        gts.append(from_uint16(gt16))
        ids.append(f"{i:05d}")
    if not ids:
        return Dataset([], np.zeros((0, 4, 0, 0)), np.zeros((0, 0, 0)))
    return Dataset(ids, np.stack(caps), np.stack(gts))


def _write_sample(out_dir, sid, cfg):
    rel = Path("samples") / sid
    d = Path(out_dir) / rel
    try:
        d.mkdir(parents=True, exist_ok=True)
        stack, gt16, raw16 = render_sample(cfg)
        io.write_pgm(d / "raw.pgm", raw16)
        io.write_pgm(d / "gt.pgm", gt16)
        io.write_tensorblob(d / "stack.pftb", stack.as_array())
        io.write_json(d / "meta.json", {"id": sid, "seed": cfg.seed, "config": cfg.to_dict()})
    except OSError as err:
        raise DataError(f"failed writing sample {sid} under {d}: {err}") from err
    return {
        "id": sid,
        "raw": str(rel / "raw.pgm"),
        "gt": str(rel / "gt.pgm"),
        "stack": str(rel / "stack.pftb"),
        "meta": str(rel / "meta.json"),
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
    }


def make_dataset(configs, count, out_dir, seed=0):
    """Render ``count`` paired samples into ``out_dir`` and write the manifest.

    Configs are cycled over sample indices; each sample gets its own seed
    from ``(seed, index)``. The manifest is written last.
    """
    configs = list(configs)
    if count < 0:
        raise ConfigError(f"count must be non-negative, got {count}", "count")
    if count and not configs:
        raise ConfigError("at least one scene config is required", "scenes")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise DataError(f"cannot create dataset directory {out_dir}: {err}") from err
    entries = []
    for i in range(count):
        cfg = _config_for(configs, seed, i)
        entry = _write_sample(out_dir, f"{i:05d}", cfg)
        entry["config_index"] = i % len(configs)
        entries.append(entry)
    manifest = {
        "format_version": MANIFEST_VERSION,
        "kind": "filmpol-dataset",
        "base_seed": int(seed),
        "configs": [c.to_dict() for c in configs],
        "config_digest": configs_digest(configs),
        "samples": entries,
    }
    try:
        io.write_json(out_dir / MANIFEST_NAME, manifest)
    except OSError as err:
        raise DataError(f"cannot write manifest in {out_dir}: {err}") from err
    return manifest


def _manifest_path(path):
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() else path


def load_manifest(path, check_files=True):
    path = _manifest_path(path)
    try:
        m = io.read_json(path, "manifest")
    except ConfigError as err:
        raise FormatError(str(err)) from None
    if not isinstance(m, dict) or m.get("format_version") != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest format_version "
                          f"{m.get('format_version') if isinstance(m, dict) else None!r}")
    for key in ("samples", "configs", "base_seed"):
        if key not in m:
            raise FormatError(f"{path}: manifest missing '{key}'")
    if check_files:
        root = path.parent
        for s in m["samples"]:
            for k in ("raw", "gt", "stack", "meta"):
                if not (root / s[k]).is_file():
                    raise DataError(f"{path}: sample {s['id']} references missing file {s[k]}")
    return m


def replay_dataset(manifest_path, out_dir):
    """Regenerate every sample of a manifest from its recorded seeds."""
    m = load_manifest(manifest_path, check_files=False)
    configs = [SceneConfig.from_dict(c, "configs[]") for c in m["configs"]]
    return make_dataset(configs, len(m["samples"]), out_dir, m["base_seed"])


def load_dataset(path, source="stack", method=DemosaicMethod.EDGE_AWARE):
    """Load a written dataset into memory.

    ``source="stack"`` uses the stored full-resolution captures;
    ``source="raw"`` demosaics the 16-bit sensor mosaic with ``method``.
    """
    mpath = _manifest_path(path)
    m = load_manifest(mpath)
    root = mpath.parent
    caps, gts, ids = [], [], []
    for s in m["samples"]:
        if source == "stack":
            arr = io.read_tensorblob(root / s["stack"])
        elif source == "raw":
            raw = RawMosaic(from_uint16(io.read_pgm(root / s["raw"])))
            arr = demosaic(raw, method).as_array()
        else:
            raise ConfigError(f"unknown dataset source {source!r}", "source")
        caps.append(arr.astype(np.float64))
        gts.append(from_uint16(io.read_pgm(root / s["gt"])))
        ids.append(s["id"])
    if not ids:
        return Dataset([], np.zeros((0, 4, 0, 0)), np.zeros((0, 0, 0)))
    return Dataset(ids, np.stack(caps), np.stack(gts))


def file_digests(root):
    """sha256 of every file under ``root`` keyed by relative path."""
    root = Path(root)
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in sorted(files):
            p = Path(dirpath) / f
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out

