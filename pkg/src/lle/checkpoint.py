"""LLCK checkpoint container.

Layout (all integers little-endian u32)::

    b"LLCK" | version | len, config text (UTF-8)
    | count | count x [len, name (UTF-8) | rank | dims... | float32 data]
    | len, JSON state (sorted keys, compact)

The container is agnostic of what the tensors mean; the trainer decides
names and state keys.
"""
from __future__ import annotations

import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import DTYPE, tick

MAGIC = b"LLCK"
VERSION = 1
_U32 = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config_text: str
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    state: dict = field(default_factory=dict)
    version: int = VERSION


def encode(ckpt: Checkpoint) -> bytes:
    out = [MAGIC, _U32.pack(ckpt.version)]
    cfg = ckpt.config_text.encode("utf-8")
    out += [_U32.pack(len(cfg)), cfg, _U32.pack(len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        if arr.dtype != DTYPE:
            raise CheckpointError(f"tensor {name!r} has dtype {arr.dtype}, expected float32")
        nb = name.encode("utf-8")
        out += [_U32.pack(len(nb)), nb, _U32.pack(arr.ndim)]
        out += [_U32.pack(d) for d in arr.shape]
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    state = json.dumps(ckpt.state, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    out += [_U32.pack(len(state)), state]
    return b"".join(out)


class _Reader:
    def __init__(self, blob: bytes, source: str):
        self.blob, self.pos, self.source = blob, 0, source

    def take(self, n: int, what: str) -> bytes:
        left = len(self.blob) - self.pos
        if n > left:
            raise CheckpointError(
                f"{self.source}: truncated at offset {self.pos} reading {what} (need {n} bytes, {left} left)"
            )
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    def text(self, what: str) -> str:
        n = self.u32(f"{what} length")
        at = self.pos
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{self.source}: invalid UTF-8 in {what} at offset {at}: {exc}") from None


def decode(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    r = _Reader(blob, source)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    version = r.u32("version")
    if version > VERSION:
        raise CheckpointError(f"{source}: checkpoint version {version} is newer than supported version {VERSION}")
    if version < 1:
        raise CheckpointError(f"{source}: invalid checkpoint version {version}")
    config_text = r.text("config")
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for i in range(r.u32("tensor count")):
        name = r.text(f"tensor {i} name")
        rank = r.u32(f"rank of {name!r}")
        if rank > 8:
            raise CheckpointError(f"{source}: implausible rank {rank} for {name!r} at offset {r.pos - 4}")
        dims = tuple(r.u32(f"dims of {name!r}") for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64))
        raw = r.take(4 * count, f"data of {name!r}")
        if name in tensors:
            raise CheckpointError(f"{source}: duplicate tensor {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(DTYPE)
    at = r.pos
    try:
        state = json.loads(r.text("state"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{source}: malformed state block at offset {at}: {exc}") from None
    if r.pos != len(blob):
        raise CheckpointError(f"{source}: {len(blob) - r.pos} trailing bytes after offset {r.pos}")
    return Checkpoint(config_text, tensors, state, version)


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    """Write atomically (temp file + rename) so a crash never leaves half a file."""
    path = Path(path)
    blob = encode(ckpt)
    tmp = path.with_name(path.name + ".tmp")
    tick("io_write")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    tick("io_read")
    return decode(path.read_bytes(), str(path))
