"""Checkpoint serialization: a self-describing binary container.

Layout (all integers little-endian):

    magic   4 bytes          b"DYNF"
    version u32              format version, currently 1
    count   u32              number of tensors
    names   count entries    u32 byte length + utf-8 tensor name, sorted
    mlen    u64              manifest byte length
    manifest                 canonical JSON (sorted keys, compact separators)
    blobs   count entries    u32 rank + rank u64 dims + float32 LE data,
                             in name-table order
    digest  32 bytes         sha256 over every preceding byte

The manifest records the config fingerprint, training step, a metric
snapshot, per-tensor shapes, and the decoder's symbol table. Loading verifies
magic, version, and digest; writes go to a temp file and rename into place so
interrupted saves never leave a partial checkpoint at the final path.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .vocab import symbol_table

MAGIC = b"DYNF"
FORMAT_VERSION = 1


def state_tensors(module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {name: t for name, t in module.state_dict().items()}


def parameter_checksum(named: dict[str, torch.Tensor] | torch.nn.Module) -> str:
    """sha256 over name-sorted float32 little-endian parameter bytes."""
    if isinstance(named, torch.nn.Module):
        named = state_tensors(named)
    digest = hashlib.sha256()
    for name in sorted(named):
        digest.update(name.encode())
        arr = named[name].detach().cpu().to(torch.float32).numpy()
        digest.update(np.ascontiguousarray(arr).astype("<f4").tobytes())
    return digest.hexdigest()


def save_checkpoint(tensors: dict[str, torch.Tensor], path: str | Path,
                    fingerprint: str = "", step: int = 0,
                    metrics: dict | None = None, extra: dict | None = None) -> None:
    """Serialize tensors plus a manifest; atomic via temp file + rename."""
    path = Path(path)
    names = sorted(tensors)
    arrays = {}
    for name in names:
        t = tensors[name].detach().cpu()
        if not t.dtype.is_floating_point:
            raise CheckpointError(f"tensor {name} has unsupported dtype {t.dtype}")
        # asarray keeps rank-0 tensors rank-0 (ascontiguousarray would not)
        arrays[name] = np.asarray(t.to(torch.float32).numpy(), dtype="<f4", order="C")
    manifest = {
        "fingerprint": fingerprint,
        "format_version": FORMAT_VERSION,
        "metrics": metrics or {},
        "step": step,
        "symbols": symbol_table(),
        "tensors": {name: list(arrays[name].shape) for name in names},
    }
    if extra:
        manifest.update(extra)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    blob += struct.pack("<I", len(names))
    for name in names:
        encoded = name.encode()
        blob += struct.pack("<I", len(encoded)) + encoded
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    blob += struct.pack("<Q", len(mbytes)) + mbytes
    for name in names:
        arr = arrays[name]
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
        blob += arr.tobytes()
    blob += hashlib.sha256(bytes(blob)).digest()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(bytes(blob))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: {self.path}")
        out = self.data[self.pos: self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    """Read tensors and manifest, verifying magic, version, and digest."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(data) < 44:
        raise CheckpointError(f"not a checkpoint (too short): {path}")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"checksum mismatch: {path} is corrupt")
    r = _Reader(body, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"bad magic; {path} is not a checkpoint")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"incompatible checkpoint format version {version} (expected {FORMAT_VERSION})")
    names = [r.take(r.u32()).decode() for _ in range(r.u32())]
    manifest = json.loads(r.take(r.u64()).decode())
    tensors = {}
    for name in names:
        rank = r.u32()
        shape = struct.unpack(f"<{rank}Q", r.take(8 * rank)) if rank else ()
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        tensors[name] = torch.from_numpy(arr.copy())
    if r.pos != len(body):
        raise CheckpointError(f"trailing bytes after blobs in {path}")
    return tensors, manifest


def save_model(model: torch.nn.Module, path: str | Path, **manifest_fields) -> None:
    save_checkpoint(state_tensors(model), path, **manifest_fields)


def load_model(model: torch.nn.Module, path: str | Path) -> dict:
    """Load a checkpoint's tensors into `model`; returns the manifest."""
    tensors, manifest = load_checkpoint(path)
    missing = set(model.state_dict()) - set(tensors)
    unexpected = set(tensors) - set(model.state_dict())
    if missing or unexpected:
        raise CheckpointError(
            f"checkpoint does not match model: missing {sorted(missing)[:3]}, "
            f"unexpected {sorted(unexpected)[:3]}")
    model.load_state_dict(tensors)
    return manifest
