"""Single-file checkpoints: magic, JSON metadata, named little-endian float64 tensors.

Layout::

    b"ROPESAT1"
    u64 json_len, json bytes (UTF-8)       # {"config": ..., "meta": ...}
    u64 n_tensors
    per tensor: u32 name_len, name, u32 ndim, u64 * ndim shape, <f8 data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import ModelConfig, ModelParams

MAGIC = b"ROPESAT1"


class CheckpointError(ValueError):
    pass


def _named(params: ModelParams) -> dict[str, np.ndarray]:
    out = {"param:" + k: v for k, v in params.tensors.items()}
    out.update({"buffer:" + k: v for k, v in params.buffers.items()})
    out["mask"] = params.mask.astype(np.float64)
    return out


def save_checkpoint(params: ModelParams, path: str | Path, meta: dict | None = None) -> None:
    header = json.dumps({"config": params.config.to_dict(), "meta": meta or {}},
                        sort_keys=True).encode("utf-8")
    tensors = _named(params)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", len(tensors)))
        for name, arr in tensors.items():
            b = name.encode("utf-8")
            fh.write(struct.pack("<I", len(b)))
            fh.write(b)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a ROPESAT1 checkpoint")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (hlen,) = struct.unpack("<Q", take(8))
    header = json.loads(take(hlen).decode("utf-8"))
    (count,) = struct.unpack("<Q", take(8))
    tensors, buffers, mask = {}, {}, None
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        if name.startswith("param:"):
            tensors[name[6:]] = arr
        elif name.startswith("buffer:"):
            buffers[name[7:]] = arr
        elif name == "mask":
            mask = arr.astype(bool)
    cfg = ModelConfig.from_dict(header["config"])
    params = ModelParams(cfg, tensors, buffers, mask)
    params.check()
    return params, header.get("meta", {})
