"""Low-level helpers for the binary file formats (all little-endian)."""

import struct
from typing import BinaryIO

import numpy as np

from .errors import FormatError

DTYPE_F32 = 0
DTYPE_U8 = 1


def read_exact(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def write_u8(f: BinaryIO, v: int) -> None:
    f.write(struct.pack("<B", v))


def write_u16(f: BinaryIO, v: int) -> None:
    f.write(struct.pack("<H", v))


def write_u32(f: BinaryIO, v: int) -> None:
    f.write(struct.pack("<I", v))


def write_u64(f: BinaryIO, v: int) -> None:
    f.write(struct.pack("<Q", v))


def write_f64(f: BinaryIO, v: float) -> None:
    f.write(struct.pack("<d", v))


def read_u8(f: BinaryIO) -> int:
    return struct.unpack("<B", read_exact(f, 1))[0]


def read_u16(f: BinaryIO) -> int:
    return struct.unpack("<H", read_exact(f, 2))[0]


def read_u32(f: BinaryIO) -> int:
    return struct.unpack("<I", read_exact(f, 4))[0]


def read_u64(f: BinaryIO) -> int:
    return struct.unpack("<Q", read_exact(f, 8))[0]


def read_f64(f: BinaryIO) -> float:
    return struct.unpack("<d", read_exact(f, 8))[0]


def write_array(f: BinaryIO, arr: np.ndarray) -> None:
    """dtype u8 | rank u8 | extents u32[] | raw data."""
    if arr.dtype == np.float32:
        code = DTYPE_F32
    elif arr.dtype == np.uint8:
        code = DTYPE_U8
    else:
        raise FormatError(f"unsupported array dtype {arr.dtype}")
    write_u8(f, code)
    write_u8(f, arr.ndim)
    for e in arr.shape:
        write_u32(f, e)
    f.write(np.ascontiguousarray(arr).astype("<f4" if code == DTYPE_F32 else np.uint8).tobytes())


def read_array(f: BinaryIO) -> np.ndarray:
    code = read_u8(f)
    rank = read_u8(f)
    shape = tuple(read_u32(f) for _ in range(rank))
    count = int(np.prod(shape)) if rank else 1
    if code == DTYPE_F32:
        raw = read_exact(f, 4 * count)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
    if code == DTYPE_U8:
        raw = read_exact(f, count)
        return np.frombuffer(raw, dtype=np.uint8).copy().reshape(shape)
    raise FormatError(f"unknown dtype code {code}")
