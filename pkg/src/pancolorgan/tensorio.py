"""On-disk tensor and checkpoint container formats.

Tensor file layout (all integers little-endian)::

    magic    8 bytes   b"PCGTNSR\\x00"
    version  uint32    1
    dtype    uint32    1 = float32, 2 = float64, 3 = int64
    ndim     uint32
    shape    ndim x uint64
    payload  row-major little-endian values

A container file bundles a JSON metadata block with named tensors::

    magic    8 bytes   b"PCGCKPT\\x00"
    version  uint32    1
    meta_len uint64
    meta     UTF-8 JSON {"meta": {...}, "tensors": [[name, offset, nbytes], ...]}
    records  concatenated tensor records (offsets relative to the record area)
"""

from __future__ import annotations

import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import TensorFormatError

TENSOR_MAGIC = b"PCGTNSR\x00"
CONTAINER_MAGIC = b"PCGCKPT\x00"
VERSION = 1
CHUNK_BYTES = 1 << 22

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_CODES = {np.dtype(v).newbyteorder("="): k for k, v in _DTYPES.items()}


def _dtype_code(dtype):
    try:
        return _CODES[np.dtype(dtype).newbyteorder("=")]
    except KeyError:
        raise TensorFormatError(f"unsupported tensor dtype {dtype}") from None


def write_tensor_to(fh, array) -> None:
    array = np.asarray(array)
    code = _dtype_code(array.dtype)
    data = np.require(array, dtype=_DTYPES[code], requirements="C")
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<III", VERSION, code, data.ndim))
    fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
    flat = data.reshape(-1).view(np.uint8)
    for start in range(0, flat.size, CHUNK_BYTES):
        fh.write(flat[start:start + CHUNK_BYTES].tobytes())


def read_tensor_from(fh) -> np.ndarray:
    magic = fh.read(8)
    if magic != TENSOR_MAGIC:
        raise TensorFormatError(f"bad tensor magic {magic!r}")
    version, code, ndim = struct.unpack("<III", _read_exact(fh, 12))
    if version != VERSION:
        raise TensorFormatError(f"unsupported tensor version {version}")
    if code not in _DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
    dtype = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    payload = _read_exact(fh, count * dtype.itemsize)
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def _read_exact(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise TensorFormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def _atomic_write(path, write):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        write(fh)
    os.replace(tmp, path)


def save_tensor(path, array) -> None:
    _atomic_write(path, lambda fh: write_tensor_to(fh, array))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor_from(fh)


def save_container(path, meta: dict, tensors: dict) -> None:
    records = io.BytesIO()
    index = []
    for name, array in tensors.items():
        start = records.tell()
        write_tensor_to(records, array)
        index.append([name, start, records.tell() - start])
    header = json.dumps({"meta": meta, "tensors": index}, sort_keys=True).encode("utf-8")

    def write(fh):
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        fh.write(records.getbuffer())

    _atomic_write(path, write)


def load_container(path):
    """Returns ``(meta, tensors)`` with tensors in their stored order."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CONTAINER_MAGIC:
            raise TensorFormatError(f"bad container magic {magic!r}")
        version, meta_len = struct.unpack("<IQ", _read_exact(fh, 12))
        if version != VERSION:
            raise TensorFormatError(f"unsupported container version {version}")
        header = json.loads(_read_exact(fh, meta_len).decode("utf-8"))
        base = fh.tell()
        tensors = {}
        for name, offset, _ in header["tensors"]:
            fh.seek(base + offset)
            tensors[name] = read_tensor_from(fh)
    return header["meta"], tensors
