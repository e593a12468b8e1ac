"""Versioned binary checkpoint files (magic "RRKCKPT1").

Layout, all little-endian:
  8 bytes   magic b"RRKCKPT1"
  u32       config block length, then that many bytes of UTF-8 JSON
            (model config fields plus metadata: variant, step, seed,
            config_hash, frozen)
  u32       tensor count, then per tensor:
              u32 name length + UTF-8 name
              u8  dtype (0 = float64, 1 = float32)
              u8  ndim, then ndim x u32 dims
              row-major payload

JSON keys are sorted so identical checkpoints serialize byte-identically.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import Checkpoint, ModelConfig

MAGIC = b"RRKCKPT1"
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_DTYPE_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1}


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> None:
    cfg = {f: getattr(checkpoint.config, f) for f in checkpoint.config.__dataclass_fields__}
    block = json.dumps({"config": cfg, "meta": checkpoint.meta}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(block)))
        f.write(block)
        f.write(struct.pack("<I", len(checkpoint.params)))
        for name in sorted(checkpoint.params):
            value = np.ascontiguousarray(checkpoint.params[name])
            code = _DTYPE_CODES.get(value.dtype)
            if code is None:
                raise ValueError(f"tensor {name!r} has unsupported dtype {value.dtype}")
            encoded = name.encode()
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", code, value.ndim))
            f.write(struct.pack(f"<{value.ndim}I", *value.shape))
            f.write(value.astype(value.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    off = 8

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise ValueError(f"{path}: truncated checkpoint")
        chunk = data[off : off + n]
        off += n
        return chunk

    (block_len,) = struct.unpack("<I", take(4))
    block = json.loads(take(block_len).decode())
    config = ModelConfig(**block["config"])
    (count,) = struct.unpack("<I", take(4))
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode()
        code, ndim = struct.unpack("<BB", take(2))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dtype = _DTYPES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        params[name] = np.frombuffer(take(n_bytes), dtype=dtype).reshape(shape).copy()
    return Checkpoint(config, params, dict(block["meta"]))
