"""Binary checkpoint format.

Layout (all integers unsigned 32-bit little-endian)::

    b"GZSL" | version | n_arrays
    per array: name_len | utf-8 name | rank | dims[rank] | float32 LE data (row-major)
"""
from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"GZSL"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path: str | os.PathLike, arrays: Mapping[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_arrays(path: str | os.PathLike) -> dict[str, np.ndarray]:
    """Read a checkpoint; values come back upcast to float64."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        off = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if off + 4 * size > len(buf):
                raise CheckpointError(f"{path}: truncated array {name!r}")
            data = np.frombuffer(buf, dtype="<f4", count=size, offset=off)
            off += 4 * size
            out[name] = data.astype(np.float64).reshape(dims)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return out


def round_to_f32(params) -> None:
    """Snap float64 parameters onto float32-representable values in place."""
    for p in params:
        p.data[...] = p.data.astype(np.float32).astype(np.float64)


def state_dict(named: Mapping[str, "object"]) -> dict[str, np.ndarray]:
    return {k: t.data for k, t in named.items()}


def load_into(named: Mapping[str, "object"], arrays: Mapping[str, np.ndarray], source: str = "checkpoint") -> None:
    """Copy ``arrays`` into the tensors of ``named``; names and shapes must match exactly."""
    missing = sorted(set(named) - set(arrays))
    extra = sorted(set(arrays) - set(named))
    if missing or extra:
        raise CheckpointError(f"{source}: missing arrays {missing}, unexpected arrays {extra}")
    for k, t in named.items():
        if arrays[k].shape != t.data.shape:
            raise CheckpointError(f"{source}: array {k!r} has shape {arrays[k].shape}, expected {t.data.shape}")
        t.data[...] = arrays[k]
