"""The "BBC1" binary container.

Layout (little-endian)::

    b"BBC1"                      magic
    u16                          format version
    u32 + bytes                  JSON architecture descriptor (sorted keys)
    u32                          tensor count
    per tensor: u8 ndim, u32 * ndim dims, float64 * prod(dims)
    u64                          FNV-1a 64 over the concatenated tensor bytes
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError

MAGIC = b"BBC1"
VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, h: int = _FNV_OFFSET) -> int:
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


def param_bytes(params: Sequence[np.ndarray]) -> bytes:
    return b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in params)


def checksum(params: Sequence[np.ndarray]) -> int:
    return fnv1a64(param_bytes(params))


def dumps(descriptor: dict, tensors: Sequence[np.ndarray]) -> bytes:
    desc = json.dumps(descriptor, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(desc)), desc,
             struct.pack("<I", len(tensors))]
    for t in tensors:
        t = np.asarray(t, dtype="<f8")
        parts.append(struct.pack("<B", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t).tobytes())
    parts.append(struct.pack("<Q", checksum(tensors)))
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict, list[np.ndarray]]:
    if blob[:4] != MAGIC:
        raise ConfigError("not a BBC1 checkpoint (bad magic)")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    off = 6
    (n,) = struct.unpack_from("<I", blob, off)
    off += 4
    descriptor = json.loads(blob[off:off + n].decode())
    off += n
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    tensors = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors.append(np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64))
        off += 8 * size
    (stored,) = struct.unpack_from("<Q", blob, off)
    if stored != checksum(tensors):
        raise ConfigError("checkpoint checksum mismatch")
    return descriptor, tensors


def save(path: str | Path, descriptor: dict, tensors: Sequence[np.ndarray]) -> None:
    Path(path).write_bytes(dumps(descriptor, tensors))


def load(path: str | Path) -> tuple[dict, list[np.ndarray]]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"checkpoint {p} does not exist")
    return loads(p.read_bytes())
