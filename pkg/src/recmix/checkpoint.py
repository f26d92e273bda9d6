"""Flat binary checkpoint container.

Layout, all little-endian:
    magic "RMCK" | version u32 | parameter count u64
    then per parameter:
    name length u32 | name bytes (utf-8) | rank u32 | extents u64[rank] | float32 data
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"RMCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, named_params: list[tuple[str, np.ndarray]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(named_params)))
        for name, arr in named_params:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<Q", extent))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (count,) = struct.unpack_from("<Q", data, 8)
    offset = 16
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", data, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}Q", data, offset)
        offset += 8 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset += 4 * n
        params[name] = arr.copy()
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return params


def save_model(path, model, deploy: bool = False) -> None:
    """Write model parameters; deploy checkpoints drop the roi head."""
    named = model.named_parameters(include_roi_head=not deploy)
    save_checkpoint(path, [(n, p.data) for n, p in named])


def load_model(path, model) -> None:
    params = load_checkpoint(path)
    for name, tensor in model.named_parameters(include_roi_head=False):
        if name not in params:
            raise CheckpointError(f"checkpoint missing parameter {name}")
        if params[name].shape != tensor.data.shape:
            raise CheckpointError(
                f"{name}: checkpoint shape {params[name].shape} != model shape {tensor.data.shape}")
        tensor.data[...] = params[name].astype(tensor.data.dtype)
    for name, tensor in model.named_parameters(include_roi_head=True):
        if name.startswith("roi_head.") and name in params:
            tensor.data[...] = params[name].astype(tensor.data.dtype)
