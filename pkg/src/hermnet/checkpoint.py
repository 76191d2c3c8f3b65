"""Self-describing binary checkpoints.

Layout (all integers little-endian)::

    b"HERMNET-CKPT-1\\n"
    u32 n, then n bytes of UTF-8 JSON: {"config": {...}, "meta": {...}}
    u32 tensor count
    per tensor: u32 name length, UTF-8 name, u32 ndim, ndim x u64 extents,
                prod(extents) x f64 values (row-major)
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .autodiff import Tensor
from .model import HermNet, ModelConfig

MAGIC = b"HERMNET-CKPT-1\n"


class CheckpointError(ValueError):
    pass


def dumps(config: ModelConfig, params: dict, meta: dict | None = None) -> bytes:
    header = json.dumps({"config": config.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    out = [MAGIC, struct.pack("<I", len(header)), header, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = params[name].data if isinstance(params[name], Tensor) else np.asarray(params[name], dtype=np.float64)
        bname = name.encode()
        out.append(struct.pack("<I", len(bname)) + bname)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def loads(blob: bytes):
    """Inverse of :func:`dumps`; returns ``(config, params, meta)``."""
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a HermNet checkpoint (bad header)")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError("truncated checkpoint")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    (n,) = struct.unpack("<I", take(4))
    header = json.loads(take(n).decode())
    config = ModelConfig(**header["config"])
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (ln,) = struct.unpack("<I", take(4))
        name = take(ln).decode()
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        params[name] = Tensor(data, requires_grad=True)
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last tensor")
    return config, params, header.get("meta", {})


def save(path: str | os.PathLike, model: HermNet, meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model.config, model.params, meta))


def load(path: str | os.PathLike) -> HermNet:
    with open(path, "rb") as fh:
        config, params, meta = loads(fh.read())
    model = HermNet(config, params)
    model.meta = meta
    return model
