"""Low-level binary container encoding shared by checkpoints and datasets.

Everything is little-endian: u32/u64 integers, f64 scalars, and f64 arrays
each preceded by a u64 element count.  Readers validate magic tags, version,
element counts, and trailing bytes, so truncated or mismatched files fail
loudly with CheckpointError.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointError

FORMAT_VERSION = 1

MAGIC_GARA = b"GARA"
MAGIC_SINGLE = b"GAR1"
MAGIC_LORA = b"LORA"
MAGIC_MOE = b"MOEL"
MAGIC_BACKBONE = b"TOYB"
MAGIC_CALIBRATION = b"CALB"
MAGIC_DATASET = b"BNCH"
MAGIC_CLEAN = b"CLNS"


def write_u32(f, x: int) -> None:
    f.write(struct.pack("<I", int(x)))


def write_u64(f, x: int) -> None:
    f.write(struct.pack("<Q", int(x)))


def write_f64(f, x: float) -> None:
    f.write(struct.pack("<d", float(x)))


def write_array(f, arr) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8").reshape(-1)
    write_u64(f, arr.size)
    f.write(arr.tobytes())


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data


def read_u32(f) -> int:
    return struct.unpack("<I", _read_exact(f, 4))[0]


def read_u64(f) -> int:
    return struct.unpack("<Q", _read_exact(f, 8))[0]


def read_f64(f) -> float:
    return struct.unpack("<d", _read_exact(f, 8))[0]


def read_array(f) -> np.ndarray:
    count = read_u64(f)
    return np.frombuffer(_read_exact(f, 8 * count), dtype="<f8").astype(np.float64)


def expect_magic(f, expected: bytes) -> None:
    got = f.read(4)
    if got != expected:
        raise CheckpointError(f"bad magic {got!r}, expected {expected!r}")


def read_version(f) -> int:
    version = read_u32(f)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported container version {version}")
    return version


def expect_eof(f) -> None:
    extra = f.read(1)
    if extra:
        raise CheckpointError("trailing bytes after the last declared array")


def peek_magic(path) -> bytes:
    with open(path, "rb") as f:
        magic = f.read(4)
    if len(magic) != 4:
        raise CheckpointError(f"file too short for a magic tag: {path}")
    return magic
