"""VTTF binary array container and key=value text manifests.

Layout (all little-endian)::

    b"VTTF" | u32 version | u32 array count
    per array: u32 name length | UTF-8 name | u8 dtype (0=f64, 1=u8) | u8 rank
               | u64 extents[rank] | row-major payload
"""
from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"VTTF"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("u1")}
_TAGS = {np.dtype("float64"): 0, np.dtype("uint8"): 1}


class ContainerError(ValueError):
    pass


def write_arrays(path, arrays: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            raise ContainerError(f"{name}: unsupported dtype {arr.dtype}")
        tag = _TAGS[arr.dtype]
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BB", tag, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    path.write_bytes(b"".join(chunks))


def read_arrays(path) -> "OrderedDict[str, np.ndarray]":
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ContainerError(f"{path}: not a VTTF file")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    off = 12
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off:off + n].decode("utf-8")
        off += n
        tag, rank = struct.unpack_from("<BB", buf, off)
        off += 2
        shape = struct.unpack_from(f"<{rank}Q", buf, off)
        off += 8 * rank
        dt = _DTYPES.get(tag)
        if dt is None:
            raise ContainerError(f"{path}: unknown dtype tag {tag} for {name!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        out[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(shape).copy()
        off += nbytes
    if off != len(buf):
        raise ContainerError(f"{path}: {len(buf) - off} trailing bytes")
    return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_manifest(path, entries: Mapping[str, object]) -> None:
    lines = [f"{k}={_fmt(v)}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> "OrderedDict[str, str]":
    out: OrderedDict[str, str] = OrderedDict()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, _, v = line.partition("=")
        out[k.strip()] = v.strip()
    return out
