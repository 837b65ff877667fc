"""Binary tensor file format shared by datasets, checkpoints, and dumps.

Layout, all little-endian: magic ``SCAM``, u32 version (currently 1),
u8 dtype code (0 = float32), u8 rank, rank x u64 extents, then the
row-major payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ContractViolationError, DataError

MAGIC = b"SCAM"
VERSION = 1
_DTYPE_F32 = 0


def save_tensor(path, array: np.ndarray) -> None:
    """Write a float32 array; other dtypes are a contract violation."""
    arr = np.asarray(array)
    if arr.dtype != np.float32:
        raise ContractViolationError(
            f"tensor files store float32 only, got {arr.dtype} for {path}"
        )
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<BB", _DTYPE_F32, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.astype("<f4", copy=False).tobytes(order="C"))


def load_tensor(path) -> np.ndarray:
    """Read a tensor file; any structural defect raises DataError naming it."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read tensor file {path}: {exc}") from exc

    header = struct.calcsize("<4sIBB")
    if len(raw) < header:
        raise DataError(f"truncated tensor file {path}: missing header")
    magic, version, dtype_code, rank = struct.unpack_from("<4sIBB", raw, 0)
    if magic != MAGIC:
        raise DataError(f"bad magic in tensor file {path}")
    if version != VERSION:
        raise DataError(f"unsupported tensor file version {version} in {path}")
    if dtype_code != _DTYPE_F32:
        raise DataError(f"unsupported dtype code {dtype_code} in {path}")
    offset = header
    need = struct.calcsize(f"<{rank}Q")
    if len(raw) < offset + need:
        raise DataError(f"truncated tensor file {path}: missing extents")
    shape = struct.unpack_from(f"<{rank}Q", raw, offset)
    offset += need
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    payload = raw[offset:]
    if len(payload) != count * 4:
        raise DataError(
            f"truncated tensor file {path}: expected {count * 4} payload bytes, "
            f"got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4", count=count)
    # frombuffer views are read-only; hand back an owned, writable array.
    return data.reshape(shape).astype(np.float32, copy=True)
