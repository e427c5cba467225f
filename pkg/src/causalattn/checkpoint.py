"""Flat binary checkpoint: named float64 tensors, little-endian throughout."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CAUSALATTN-CKPT1"


def save_checkpoint(params: dict, path) -> None:
    """Write (name, shape, float64 buffer) entries; accepts Tensors or arrays."""
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", len(params))]
    for name, value in params.items():
        # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
        arr = np.asarray(getattr(value, "values", value), dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}q", *arr.shape))
        chunks.append(arr.tobytes())
    path.write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        out = struct.unpack_from(fmt, blob, pos)
        pos += size
        return out

    (count,) = take("<I")
    params = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = take("<B")
        shape = take(f"<{ndim}q")
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += size * 8
        params[name] = arr.astype(np.float64)
    if pos != len(blob):
        raise ValueError(f"{path}: trailing bytes after last entry")
    return params


def apply_checkpoint(model, path) -> None:
    """Load a checkpoint into a model's parameters, checking names and shapes."""
    stored = load_checkpoint(path)
    params = model.named_parameters()
    if set(stored) != set(params):
        missing = set(params) - set(stored)
        extra = set(stored) - set(params)
        raise ValueError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, tensor in params.items():
        if stored[name].shape != tensor.values.shape:
            raise ValueError(f"checkpoint entry {name}: shape {stored[name].shape}"
                             f" != parameter shape {tensor.values.shape}")
        tensor.values[...] = stored[name]
