"""``RCKPT`` tensor container.

Layout (all integers little-endian)::

    b"RCKPT" | version u16 | count u32 | entries sorted by key

    entry: key_len u16 | key utf-8 | dtype u8 | ndim u8 | dims u32 * ndim | raw data

Keys are written in sorted order, so loading and re-saving a file reproduces it byte for byte.
"""

from __future__ import annotations

import hashlib
import io
import struct
from typing import Mapping

import numpy as np
import torch

MAGIC = b"RCKPT"
VERSION = 1

_DTYPES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<i8"),
    3: np.dtype("u1"),
    4: np.dtype("<i4"),
}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def _as_array(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value)
    if arr.dtype == np.bool_:
        arr = arr.astype("u1")
    arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    if arr.dtype not in _CODES:
        raise CheckpointError(f"unsupported dtype {arr.dtype}")
    return np.ascontiguousarray(arr)


def dumps(tensors: Mapping[str, object]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(tensors)))
    for key in sorted(tensors):
        arr = _as_array(tensors[key])
        raw_key = key.encode("utf-8")
        buf.write(struct.pack("<H", len(raw_key)))
        buf.write(raw_key)
        buf.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(data: bytes) -> dict[str, np.ndarray]:
    if data[:5] != MAGIC:
        raise CheckpointError("not an RCKPT file")
    version, count = struct.unpack_from("<HI", data, 5)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 11
    out = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        key = data[pos:pos + klen].decode("utf-8")
        pos += klen
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        dtype = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        out[key] = np.frombuffer(data[pos:pos + nbytes], dtype=dtype).reshape(shape).copy()
        pos += nbytes
    if pos != len(data):
        raise CheckpointError("trailing bytes after last entry")
    return out


def save(tensors: Mapping[str, object], path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())


def encode_text(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype="u1").copy()


def decode_text(arr: np.ndarray) -> str:
    return bytes(np.asarray(arr, dtype="u1")).decode("utf-8")


def digest(tensors: Mapping[str, object]) -> str:
    return hashlib.sha256(dumps(tensors)).hexdigest()
