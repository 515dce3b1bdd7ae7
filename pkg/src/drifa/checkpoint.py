"""
Flat binary checkpoint container.

Layout (all integers little-endian)::

    b"DRIF"  u32 version
    repeated until EOF:
        u32 name_length, name (UTF-8)
        u8 dtype tag (0 = float32, 1 = float64)
        u32 rank, rank * u32 dims
        raw little-endian values
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointCorrupt

MAGIC = b"DRIF"
VERSION = 1
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def encode(params: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, value in params.items():
        value = np.asarray(value)
        if value.dtype not in _TAGS:
            raise TypeError(f"{name}: unsupported dtype {value.dtype}")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<BI", _TAGS[value.dtype], value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.astype(_DTYPES[_TAGS[value.dtype]], copy=False).tobytes(order="C"))
    return b"".join(chunks)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise CheckpointCorrupt("bad magic: not a DRIF checkpoint")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointCorrupt(f"unsupported checkpoint version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(blob):
            (length,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + length].decode("utf-8")
            if len(name.encode("utf-8")) != length:
                raise CheckpointCorrupt("truncated parameter name")
            pos += length
            tag, rank = struct.unpack_from("<BI", blob, pos)
            pos += 5
            if tag not in _DTYPES:
                raise CheckpointCorrupt(f"{name}: unknown dtype tag {tag}")
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            dtype = _DTYPES[tag]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(blob):
                raise CheckpointCorrupt(f"{name}: truncated values")
            out[name] = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize,
                                      offset=pos).reshape(dims).astype(dtype.newbyteorder("="))
            pos += nbytes
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointCorrupt(f"malformed checkpoint: {exc}") from exc
    return out


def save(path: str | Path, params: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(params))


def load(path: str | Path) -> dict[str, np.ndarray]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointCorrupt(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(blob)
