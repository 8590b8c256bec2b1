"""MVNT little-endian binary tensor files.

Layout::

    b"MVNT" | u32 version (=1) | u32 dtype code | u32 rank | rank x u64 dims | payload

dtype codes: 1 = float64, 2 = float32, 3 = uint8. Payload is row-major,
little-endian.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"MVNT"
VERSION = 1

DTYPE_CODES = {
    np.dtype("<f8"): 1,
    np.dtype("<f4"): 2,
    np.dtype("u1"): 3,
}
CODE_DTYPES = {code: dt for dt, code in DTYPE_CODES.items()}


class MVNTError(ValueError):
    """Malformed or unsupported MVNT data."""


def _normalize(array: np.ndarray) -> np.ndarray:
    arr = np.asarray(array)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
    if dt not in DTYPE_CODES:
        raise MVNTError(f"unsupported dtype {arr.dtype}; expected float64, float32 or uint8")
    return np.ascontiguousarray(arr, dtype=dt)


def encode(array: np.ndarray) -> bytes:
    arr = _normalize(array)
    header = MAGIC + struct.pack("<III", VERSION, DTYPE_CODES[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.tobytes(order="C")


def write_to(stream: BinaryIO, array: np.ndarray) -> None:
    stream.write(encode(array))


def read_from(stream: BinaryIO) -> np.ndarray:
    """Read one tensor from ``stream``, leaving it positioned after the payload."""
    head = stream.read(16)
    if len(head) < 16:
        raise MVNTError("truncated header")
    if head[:4] != MAGIC:
        raise MVNTError(f"bad magic {head[:4]!r}")
    version, code, rank = struct.unpack("<III", head[4:])
    if version != VERSION:
        raise MVNTError(f"unknown version {version}")
    if code not in CODE_DTYPES:
        raise MVNTError(f"unknown dtype code {code}")
    dims_raw = stream.read(8 * rank)
    if len(dims_raw) != 8 * rank:
        raise MVNTError("truncated dimension block")
    shape = struct.unpack(f"<{rank}Q", dims_raw)
    dtype = CODE_DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = stream.read(nbytes)
    if len(payload) != nbytes:
        raise MVNTError(f"payload length {len(payload)} != expected {nbytes}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def decode(data: bytes) -> np.ndarray:
    stream = io.BytesIO(data)
    arr = read_from(stream)
    if stream.read(1):
        raise MVNTError("trailing bytes after payload")
    return arr


def save(path: str | Path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode(array))


def load(path: str | Path) -> np.ndarray:
    try:
        return decode(Path(path).read_bytes())
    except MVNTError as exc:
        raise MVNTError(f"{path}: {exc}") from None
