"""Little-endian binary primitives shared by the model file formats."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import InputError


def read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise InputError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data


def write_u32(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<I", value))


def read_u32(fh: BinaryIO) -> int:
    return struct.unpack("<I", read_exact(fh, 4))[0]


def write_u64(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<Q", value))


def read_u64(fh: BinaryIO) -> int:
    return struct.unpack("<Q", read_exact(fh, 8))[0]


def write_str(fh: BinaryIO, text: str) -> None:
    raw = text.encode("utf-8")
    write_u32(fh, len(raw))
    fh.write(raw)


def read_str(fh: BinaryIO) -> str:
    n = read_u32(fh)
    return read_exact(fh, n).decode("utf-8")


def write_matrix(fh: BinaryIO, matrix: np.ndarray) -> None:
    """Write a 2-D array as float32 little-endian, row-major."""
    fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_matrix(fh: BinaryIO, rows: int, cols: int) -> np.ndarray:
    raw = read_exact(fh, 4 * rows * cols)
    return np.frombuffer(raw, dtype="<f4").reshape(rows, cols).copy()


def write_vector(fh: BinaryIO, vector: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(vector, dtype="<f4").tobytes())


def read_vector(fh: BinaryIO, n: int) -> np.ndarray:
    raw = read_exact(fh, 4 * n)
    return np.frombuffer(raw, dtype="<f4").copy()


def expect_magic(fh: BinaryIO, magic: bytes) -> None:
    got = fh.read(len(magic))
    if got != magic:
        raise InputError(f"bad magic: expected {magic!r}, got {got!r}")
