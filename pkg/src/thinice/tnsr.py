"""Reader and writer for the ``TNSR v1`` binary tensor format.

Layout (all little-endian)::

    b"TNSR" | u8 version=1 | u8 dtype | u8 rank | rank x u32 dims | payload

dtype 1 is float32, dtype 2 is uint32; the payload is row-major.
"""

import os
import struct

import numpy as np

from .errors import TensorFormatError

MAGIC = b"TNSR"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<u4")}
CODES = {np.dtype("float32"): 1, np.dtype("uint32"): 2}


def encode(array):
    arr = np.asarray(array)
    if arr.dtype == np.float64:
        raise TensorFormatError("TNSR stores float32 only; cast explicitly before saving")
    if arr.dtype.kind in "iub" and arr.dtype != np.uint32:
        if arr.size and (arr.min() < 0 or arr.max() > np.iinfo(np.uint32).max):
            raise TensorFormatError("integer payload out of uint32 range")
        arr = arr.astype(np.uint32)
    code = CODES.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise TensorFormatError("rank exceeds 255")
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()


def decode(buf):
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise TensorFormatError("bad magic bytes")
    version, code, rank = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise TensorFormatError(f"unsupported TNSR version {version}")
    if code not in DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    off = 7 + 4 * rank
    if len(buf) < off:
        raise TensorFormatError("truncated header")
    shape = struct.unpack_from(f"<{rank}I", buf, 7)
    dtype = DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) - off != expected:
        raise TensorFormatError(f"payload is {len(buf) - off} bytes, expected {expected}")
    arr = np.frombuffer(buf, dtype=dtype, offset=off).reshape(shape)
    return arr.astype(dtype.newbyteorder("="))


def save(path, array):
    data = encode(array)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load(path, dtype=None):
    with open(path, "rb") as fh:
        arr = decode(fh.read())
    if dtype is not None and arr.dtype != np.dtype(dtype):
        raise TensorFormatError(f"{path}: expected {np.dtype(dtype)}, found {arr.dtype}")
    return arr
