"""Binary array dumps and CSV helpers.

Array file layout: magic b"QMFD", version u16, rank u16, rank x u32 dims, then the
entries as little-endian complex128 (real, imag float64 pairs) in row-major order.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

MAGIC = b"QMFD"
VERSION = 1


class FormatError(ValueError):
    pass


def dump_array(path, array) -> Path:
    a = np.ascontiguousarray(np.asarray(array), dtype="<c16")
    if a.ndim > 0xFFFF:
        raise FormatError("rank too large")
    if any(d > 0xFFFFFFFF for d in a.shape):
        raise FormatError("dimension does not fit in u32")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HH", VERSION, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(a.tobytes(order="C"))
    return path


def load_array(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError("bad magic")
    version, rank = struct.unpack_from("<HH", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    shape = struct.unpack_from(f"<{rank}I", data, 8)
    off = 8 + 4 * rank
    n = int(np.prod(shape, dtype=np.int64))
    if len(data) - off != 16 * n:
        raise FormatError("payload size does not match header")
    return np.frombuffer(data, dtype="<c16", count=n, offset=off).reshape(shape).copy()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows, footer=None) -> Path:
    """Plain CSV; an optional footer record is written as '# key=value' lines."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        for k, v in (footer or {}).items():
            fh.write(f"# {k}={_fmt(v)}\n")
    return path
