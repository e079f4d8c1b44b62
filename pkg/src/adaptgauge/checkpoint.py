"""Flat binary parameter checkpoints.

Layout: magic (8 bytes) | format version (u32) | metadata length (u32) |
metadata JSON (utf-8) | parameter count (u32) | then per parameter:
name length (u16) + name utf-8 + rank (u8) + dims (u32 each) +
row-major little-endian float64 payload.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"AGCKPT01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray], metadata: dict | None = None):
    meta_blob = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(meta_blob)))
        f.write(meta_blob)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.astype("<f8").tobytes(order="C"))


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError(f"checkpoint truncated at byte {off} (wanted {n} more)")
        piece = blob[off:off + n]
        off += n
        return piece

    if take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic: not a parameter checkpoint")
    version, meta_len = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"format version mismatch: file has {version}, reader supports {FORMAT_VERSION}")
    metadata = json.loads(take(meta_len).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = [struct.unpack("<I", take(4))[0] for _ in range(rank)]
        size = int(np.prod(dims)) if dims else 1
        payload = take(size * 8)
        arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    if off != len(blob):
        raise CheckpointError(f"{len(blob) - off} trailing bytes after last parameter")
    return arrays, metadata


def save_module(path, module, metadata: dict | None = None):
    """Parameters plus any extra state (batchnorm stats, input scalers)."""
    arrays = {name: p.data for name, p in module.parameters().items()}
    for prefix, mod in _walk_modules(module):
        if hasattr(mod, "extra_state"):
            for key, arr in mod.extra_state().items():
                arrays[prefix + key] = arr
    save_arrays(path, arrays, metadata)


def load_module(path, module) -> dict:
    arrays, metadata = load_arrays(path)
    params = module.parameters()
    for name, p in params.items():
        if name not in arrays:
            raise CheckpointError(f"checkpoint missing parameter {name!r}")
        if arrays[name].shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: file {arrays[name].shape}, model {p.data.shape}")
        p.data[...] = arrays[name]
    for prefix, mod in _walk_modules(module):
        if hasattr(mod, "load_extra_state"):
            mod.load_extra_state({
                key: arrays[prefix + key] for key in mod.extra_state()
            })
    return metadata


def _walk_modules(module, prefix=""):
    yield prefix, module
    for cname, child in module._children.items():
        yield from _walk_modules(child, prefix=f"{prefix}{cname}.")
