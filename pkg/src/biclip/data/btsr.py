"""BTSR: a bit-exact little-endian float32 tensor container.

Layout::

    b"BTSR"  u8 version=1  u32 rank  rank x u32 extents  float32[prod(extents)]
"""

from __future__ import annotations

import os
import struct

import numpy as np

from biclip.autodiff import Tensor
from biclip.errors import BadMagicError, ExtentOverflowError, TensorFileError, TruncatedPayloadError

MAGIC = b"BTSR"
VERSION = 1
# largest payload we are willing to address (bytes)
MAX_PAYLOAD = 1 << 40


def encode_tensor(array) -> bytes:
    arr = np.asarray(getattr(array, "data", array))
    if any(n <= 0 for n in arr.shape):
        raise TensorFileError(f"cannot encode empty extent in shape {arr.shape}")
    header = MAGIC + bytes([VERSION]) + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"{source}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < 9:
        raise TruncatedPayloadError(f"{source}: header truncated")
    if buf[4] != VERSION:
        raise TensorFileError(f"{source}: unsupported version {buf[4]}")
    (rank,) = struct.unpack_from("<I", buf, 5)
    head = 9 + 4 * rank
    if len(buf) < head:
        raise TruncatedPayloadError(f"{source}: header declares rank {rank} but file ends at byte {len(buf)}")
    shape = struct.unpack_from(f"<{rank}I", buf, 9)
    if any(n == 0 for n in shape):
        raise TensorFileError(f"{source}: zero extent in shape {shape}")
    count = 1
    for n in shape:
        count *= n
    if count * 4 > MAX_PAYLOAD:
        raise ExtentOverflowError(f"{source}: extents {shape} describe {count} reals, beyond the addressable limit")
    have = len(buf) - head
    if have < count * 4:
        raise TruncatedPayloadError(f"{source}: extents {list(shape)} need {count} reals, payload holds {have // 4}")
    if have > count * 4:
        raise TensorFileError(f"{source}: {have - count * 4} trailing bytes after payload")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=head).astype(np.float32).reshape(shape)


def write_tensor_file(tensor, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(tensor))


def read_tensor_file(path: str | os.PathLike) -> Tensor:
    with open(path, "rb") as fh:
        return Tensor(decode_tensor(fh.read(), source=os.fspath(path)))
