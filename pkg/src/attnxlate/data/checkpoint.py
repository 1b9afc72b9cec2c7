"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"ATXLCKPT"                      magic, 8 bytes
    u32 version
    u64 n, then n bytes of UTF-8 JSON metadata (sorted keys)
    u32 array count, then per array:
        u16 name length, name (UTF-8)
        u8 ndim, u32 x ndim shape
        u64 byte length, raw float32 data (C order, little-endian)
    32-byte SHA-256 of everything above

Writes go to a temporary sibling and are renamed into place, so an
interrupted write never leaves a half-written file under the final name.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"ATXLCKPT"
VERSION = 1
_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


def encode_checkpoint(meta: Mapping, arrays: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        if a.dtype != np.float32:
            raise CheckpointError(f"array {name!r} is {a.dtype}; checkpoints store float32 only")
        raw = np.ascontiguousarray(a, dtype=_F32).tobytes()
        key = name.encode()
        buf.write(struct.pack("<H", len(key)))
        buf.write(key)
        buf.write(struct.pack("<B", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < len(MAGIC) + 4 + 32 or data[:len(MAGIC)] != MAGIC:
        if len(data) >= len(MAGIC) and data[:len(MAGIC)] == MAGIC:
            raise ChecksumError("checkpoint truncated")
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checkpoint checksum mismatch (truncated or corrupted)")
    pos = len(MAGIC)

    def take(fmt: str):
        nonlocal pos
        vals = struct.unpack_from(fmt, body, pos)
        pos += struct.calcsize(fmt)
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version}, expected {VERSION}")
    (n,) = take("<Q")
    meta = json.loads(body[pos:pos + n].decode())
    pos += n
    (count,) = take("<I")
    arrays = {}
    for _ in range(count):
        (klen,) = take("<H")
        name = body[pos:pos + klen].decode()
        pos += klen
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I")
        (nbytes,) = take("<Q")
        arr = np.frombuffer(body, dtype=_F32, count=nbytes // 4, offset=pos).reshape(shape)
        arrays[name] = arr.astype(np.float32)
        pos += nbytes
    if pos != len(body):
        raise CheckpointError("trailing bytes after last array")
    return meta, arrays


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_checkpoint(path: str | Path, meta: Mapping, arrays: Mapping[str, np.ndarray]) -> None:
    atomic_write_bytes(path, encode_checkpoint(meta, arrays))


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    return decode_checkpoint(Path(path).read_bytes())
