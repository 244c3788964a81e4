"""Binary tensor blocks: magic "SGT1", u32 rank, u32 dims, f64 payload.

All integers and floats are little-endian. Blocks can be concatenated
in one file (the model format does this), so the reader works on file
objects and reports byte offsets on corruption.
"""

import struct

import numpy as np

from .errors import DataFormatError

MAGIC = b"SGT1"
_MAX_RANK = 8


def write_tensor_block(fh, array):
    arr = np.ascontiguousarray(np.asarray(array, dtype=np.float64))
    fh.write(MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype("<f8", copy=False).tobytes())


def read_tensor_block(fh):
    pos = fh.tell()
    magic = fh.read(4)
    if len(magic) < 4:
        raise DataFormatError(f"truncated tensor block at byte {pos}")
    if magic != MAGIC:
        raise DataFormatError(f"bad magic {magic!r} at byte {pos}")
    raw = fh.read(4)
    if len(raw) < 4:
        raise DataFormatError(f"truncated rank field at byte {pos + 4}")
    rank = struct.unpack("<I", raw)[0]
    if rank > _MAX_RANK:
        raise DataFormatError(f"implausible rank {rank} at byte {pos + 4}")
    raw = fh.read(4 * rank)
    if len(raw) < 4 * rank:
        raise DataFormatError(f"truncated dims at byte {pos + 8}")
    dims = struct.unpack(f"<{rank}I", raw)
    count = 1
    for d in dims:
        count *= d
    payload = fh.read(8 * count)
    if len(payload) < 8 * count:
        raise DataFormatError(
            f"truncated payload at byte {pos + 8 + 4 * rank}: "
            f"expected {8 * count} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)


def save_tensor(array, path):
    with open(path, "wb") as fh:
        write_tensor_block(fh, array)


def load_tensor(path):
    with open(path, "rb") as fh:
        return read_tensor_block(fh)
