"""Binary container for named tensors plus a JSON metadata trailer.

Layout (all integers little-endian ``uint64`` unless noted)::

    magic            8 bytes   b"SSCNTC01"
    n_tensors
    repeated n_tensors times:
        name_len, name (UTF-8)
        dtype            1 byte    0 = float64, 1 = int64
        ndim, dims[ndim]
        payload          C-order little-endian values
    meta_len, meta (UTF-8 JSON object)

Datasets, linear models, SSCN checkpoints and rotations all use this one
format; they differ only in tensor names and metadata keys.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"SSCNTC01"
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_CODES = {"f": 0, "i": 1, "u": 1, "b": 1}


def save_tensors(path, tensors: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<Q", len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value)
        code = _CODES.get(arr.dtype.kind)
        if code is None:
            raise TypeError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<Q", len(raw_name)) + raw_name)
        chunks.append(struct.pack("<BQ", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    raw_meta = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<Q", len(raw_meta)) + raw_meta)
    path.write_bytes(b"".join(chunks))
    return path


class _Reader:
    def __init__(self, path):
        self.path = Path(path)
        self.buf = self.path.read_bytes()
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"{self.path}: truncated while reading {what} at offset {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]


def load_tensors(path) -> tuple[dict, dict]:
    """Read a container written by :func:`save_tensors`.

    Returns
    -------
    tensors : dict of str -> ndarray
    meta : dict
    """
    rd = _Reader(path)
    magic = rd.take(8, "magic")
    if magic != MAGIC:
        raise FormatError(f"{rd.path}: bad magic {magic!r} at offset 0")
    tensors = {}
    for _ in range(rd.u64("tensor count")):
        name = rd.take(rd.u64("name length"), "name").decode("utf-8")
        code, ndim = struct.unpack("<BQ", rd.take(9, f"header of {name!r}"))
        if code not in _DTYPES:
            raise FormatError(f"{rd.path}: unknown dtype code {code} at offset {rd.pos - 9}")
        shape = struct.unpack(f"<{ndim}Q", rd.take(8 * ndim, f"shape of {name!r}"))
        dtype = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        raw = rd.take(nbytes, f"payload of {name!r}")
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    meta = json.loads(rd.take(rd.u64("metadata length"), "metadata").decode("utf-8"))
    if rd.pos != len(rd.buf):
        raise FormatError(f"{rd.path}: {len(rd.buf) - rd.pos} trailing bytes at offset {rd.pos}")
    return tensors, meta


def save_matrix_csv(path, a, fmt="%.17g"):
    """Write a 2-D array as plain CSV for inspection."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.atleast_2d(a), delimiter=",", fmt=fmt)
    return path
