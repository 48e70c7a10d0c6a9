"""On-disk formats: 16-bit PGM images, PFTB tensor blobs, JSON documents.

Every writer produces identical bytes for identical input, and every
reader/writer pair round-trips bit-exactly.
"""
import json
import re
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

PFTB_MAGIC = b"PFTB"
PFTB_VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}

_PGM_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+"
                         rb"(?:#[^\n]*\n\s*)*(\d+)\s")


def write_pgm(path, img16):
    """Binary PGM, maxval 65535, big-endian samples."""
    img16 = np.asarray(img16)
    if img16.ndim != 2 or img16.dtype != np.uint16:
        raise FormatError(f"PGM expects a 2-D uint16 array, got {img16.dtype} {img16.shape}")
    h, w = img16.shape
    data = b"P5\n%d %d\n65535\n" % (w, h) + img16.astype(">u2").tobytes()
    Path(path).write_bytes(data)


def read_pgm(path):
    raw = Path(path).read_bytes()
    m = _PGM_HEADER.match(raw)
    if not m:
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 65535:
        raise FormatError(f"{path}: expected maxval 65535, got {maxval}")
    payload = raw[m.end():]
    if len(payload) != w * h * 2:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {w * h * 2}")
    return np.frombuffer(payload, dtype=">u2").reshape(h, w).astype(np.uint16)


def tensorblob_bytes(arr):
    arr = np.asarray(arr)
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise FormatError(f"PFTB stores float32 or float64, got {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("PFTB rank is limited to 255")
    header = PFTB_MAGIC + struct.pack("<HBB", PFTB_VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def tensorblob_from_bytes(buf, where="<bytes>"):
    if len(buf) < 8 or buf[:4] != PFTB_MAGIC:
        raise FormatError(f"{where}: bad PFTB magic")
    version, code, rank = struct.unpack_from("<HBB", buf, 4)
    if version != PFTB_VERSION:
        raise FormatError(f"{where}: unsupported PFTB version {version}")
    if code not in _DTYPES:
        raise FormatError(f"{where}: unknown PFTB dtype code {code}")
    off = 8 + 4 * rank
    if len(buf) < off:
        raise FormatError(f"{where}: truncated PFTB header")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    dt = _DTYPES[code]
    n = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(buf) - off != n * dt.itemsize:
        raise FormatError(f"{where}: PFTB payload is {len(buf) - off} bytes, "
                          f"expected {n * dt.itemsize}")
    arr = np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(dims)
    return arr.astype(dt.newbyteorder("="), copy=True)


def write_tensorblob(path, arr):
    Path(path).write_bytes(tensorblob_bytes(arr))


def read_tensorblob(path):
    return tensorblob_from_bytes(Path(path).read_bytes(), str(path))


def dumps_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps_json(obj))


def read_json(path, what="document"):
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read {what} {path}: {err.strerror}", str(path)) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: line {err.lineno} column {err.colno}: {err.msg}",
                          f"line {err.lineno}") from None


def check_fields(d, allowed, where, required=()):
    """Reject unknown keys and report missing required ones by name."""
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object", where)
    for key in d:
        if key not in allowed:
            raise ConfigError(f"unknown field '{where}.{key}'", f"{where}.{key}")
    for key in required:
        if key not in d:
            raise ConfigError(f"missing required field '{where}.{key}'", f"{where}.{key}")
