"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic    8 bytes  b"RGATCKPT"
    version  u32
    config   u64 length + UTF-8 JSON (sorted keys)
    count    u32
    tensors  count x (u16 name length, name, u8 ndim, ndim x u64 shape,
                      raw little-endian float64 data)
    digest   32 bytes SHA-256 of everything above

The writer is byte-deterministic: the same config and tensors always
produce the same file.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"RGATCKPT"
FORMAT_VERSION = 2
DIGEST_SIZE = 32


class CheckpointError(ValueError):
    pass


def dumps(config: Mapping, tensors: Mapping[str, np.ndarray]) -> bytes:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<Q", len(blob)), blob,
             struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        raw_name = name.encode()
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def loads(buf: bytes) -> tuple[dict, OrderedDict[str, np.ndarray]]:
    view = memoryview(buf)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(8)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        (clen,) = struct.unpack("<Q", take(8))
        config = json.loads(bytes(take(clen)).decode())
        (count,) = struct.unpack("<I", take(4))
        tensors: OrderedDict[str, np.ndarray] = OrderedDict()
        for _ in range(count):
            (nlen,) = struct.unpack("<H", take(2))
            name = bytes(take(nlen)).decode()
            (ndim,) = struct.unpack("<B", take(1))
            shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
            size = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(bytes(take(8 * size)), dtype="<f8").astype(np.float64)
            tensors[name] = data.reshape(shape)
    except (UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    left = len(view) - pos
    if left < DIGEST_SIZE:
        raise CheckpointError("truncated checkpoint")
    if left > DIGEST_SIZE:
        raise CheckpointError("trailing bytes after checkpoint payload")
    if hashlib.sha256(view[:pos]).digest() != bytes(view[pos:]):
        raise CheckpointError("checksum mismatch: checkpoint is corrupted")
    return config, tensors


def save(path: str | Path, config: Mapping, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(config, tensors))


def load(path: str | Path) -> tuple[dict, OrderedDict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
