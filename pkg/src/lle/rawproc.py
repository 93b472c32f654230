"""Raw-domain preprocessing for RGGB Bayer frames.

Pipeline order used everywhere in the package::

    black level -> pack to 4 channels -> multiply by exposure ratio -> clip

The ``LLR1`` container stores one normalized frame plus its exposure times.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import DTYPE, ShapeError, Tensor

LLR1_MAGIC = b"LLR1"
_LLR1_HEADER = struct.Struct("<4sIIff")

# packed channel c holds Bayer offset (c // 2, c % 2): R, G_r, G_b, B
CHANNELS = ("R", "Gr", "Gb", "B")


@dataclass
class BayerFrame:
    """Single-channel RGGB mosaic, values normalized to [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=DTYPE)
        if self.data.ndim != 2:
            raise ShapeError(f"Bayer frame must be 2-D, got shape {self.data.shape}")
        h, w = self.data.shape
        if h == 0 or w == 0 or h % 2 or w % 2:
            raise ShapeError(f"Bayer frame dimensions must be even and positive, got {h}x{w}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    pattern = "RGGB"


@dataclass
class PackedRaw:
    tensor: Tensor
    amplification: float
    exposure_in: float = 0.0
    exposure_gt: float = 0.0

    @classmethod
    def from_exposures(cls, tensor: Tensor, exposure_in: float, exposure_gt: float) -> "PackedRaw":
        if exposure_in <= 0 or exposure_gt <= 0:
            raise ValueError(f"exposure times must be positive (in={exposure_in}, gt={exposure_gt})")
        return cls(tensor, exposure_gt / exposure_in, exposure_in, exposure_gt)


def as_frame(frame) -> BayerFrame:
    return frame if isinstance(frame, BayerFrame) else BayerFrame(np.asarray(frame))


def pack_bayer(frame) -> Tensor:
    """[H, W] mosaic -> [1, 4, H/2, W/2]; channel c at (i, j) is frame[2i + c//2, 2j + c%2]."""
    d = as_frame(frame).data
    h, w = d.shape
    packed = d.reshape(h // 2, 2, w // 2, 2).transpose(1, 3, 0, 2).reshape(1, 4, h // 2, w // 2)
    return Tensor(packed)


def unpack_bayer(packed) -> BayerFrame:
    arr = packed.data if isinstance(packed, Tensor) else np.asarray(packed, dtype=DTYPE)
    if arr.ndim != 4 or arr.shape[0] != 1 or arr.shape[1] != 4:
        raise ShapeError(f"packed raw must have shape [1,4,h,w], got {arr.shape}")
    _, _, h, w = arr.shape
    return BayerFrame(arr[0].reshape(2, 2, h, w).transpose(2, 0, 3, 1).reshape(2 * h, 2 * w))


def amplify(packed: PackedRaw, clip_max: float = 1.0) -> Tensor:
    """Multiply by the exposure ratio, then clip to ``[0, clip_max]``."""
    alpha = packed.amplification
    if not alpha > 0:
        raise ValueError(f"amplification must be > 0, got {alpha}")
    out = packed.tensor.data * DTYPE(alpha)
    return Tensor(np.clip(out, DTYPE(0), DTYPE(clip_max)))


def subtract_black_level(frame, black: float, white: float, raw_scale: float = 1.0) -> BayerFrame:
    """Map ``frame * raw_scale`` from [black, white] onto [0, 1], clamped."""
    if not 0 <= black < white:
        raise ValueError(f"need 0 <= black < white, got black={black}, white={white}")
    d = as_frame(frame).data
    out = (d * DTYPE(raw_scale) - DTYPE(black)) / DTYPE(white - black)
    return BayerFrame(np.clip(out, 0, 1))


def mosaic_rggb(rgb) -> BayerFrame:
    """Sample an RGB image [1,3,H,W] (or [3,H,W]) through an RGGB filter array."""
    arr = rgb.data if isinstance(rgb, Tensor) else np.asarray(rgb, dtype=DTYPE)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ShapeError(f"mosaic_rggb takes a single image, got batch {arr.shape[0]}")
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"expected RGB image [1,3,H,W], got {arr.shape}")
    _, h, w = arr.shape
    if h % 2 or w % 2:
        raise ShapeError(f"mosaic_rggb needs even dimensions, got {h}x{w}")
    out = np.empty((h, w), DTYPE)
    out[0::2, 0::2] = arr[0, 0::2, 0::2]
    out[0::2, 1::2] = arr[1, 0::2, 1::2]
    out[1::2, 0::2] = arr[1, 1::2, 0::2]
    out[1::2, 1::2] = arr[2, 1::2, 1::2]
    return BayerFrame(out)


def preprocess(frame, alpha: float, black: float = 0.0, white: float = 1.0, clip_max: float = 1.0) -> Tensor:
    """Full input path for the generator: black level, pack, amplify, clip."""
    frame = as_frame(frame)
    if black != 0.0 or white != 1.0:
        frame = subtract_black_level(frame, black, white)
    return amplify(PackedRaw(pack_bayer(frame), alpha), clip_max=clip_max)


def rgb_preview(packed: np.ndarray) -> np.ndarray:
    """Nearest-neighbour full-resolution RGB preview of packed raw [N,4,h,w] -> [N,3,2h,2w]."""
    r = packed[:, 0]
    g = (packed[:, 1] + packed[:, 2]) * DTYPE(0.5)
    b = packed[:, 3]
    small = np.stack([r, g, b], axis=1)
    return np.repeat(np.repeat(small, 2, axis=2), 2, axis=3)


def space_to_depth_tensor(t: Tensor) -> Tensor:
    """Inverse of ``ops.depth_to_space2`` for single-channel input (no gradient)."""
    n, c, h, w = t.shape
    return Tensor(t.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 5, 2, 4).reshape(n, 4 * c, h // 2, w // 2))


# ------------------------------------------------------------------ LLR1 I/O

@dataclass
class RawFile:
    frame: BayerFrame
    exposure_in: float
    exposure_gt: float = 0.0

    @property
    def alpha(self) -> float | None:
        """Exposure ratio from metadata, or None when the ground-truth exposure is unknown."""
        if self.exposure_gt > 0 and self.exposure_in > 0:
            return self.exposure_gt / self.exposure_in
        return None


def write_llr1(path, frame, exposure_in: float, exposure_gt: float = 0.0) -> None:
    frame = as_frame(frame)
    h, w = frame.data.shape
    payload = _LLR1_HEADER.pack(LLR1_MAGIC, h, w, exposure_in, exposure_gt) + frame.data.astype("<f4").tobytes()
    Path(path).write_bytes(payload)


def read_llr1(path) -> RawFile:
    blob = Path(path).read_bytes()
    if len(blob) < _LLR1_HEADER.size:
        raise ValueError(f"{path}: truncated LLR1 header ({len(blob)} bytes)")
    magic, h, w, exp_in, exp_gt = _LLR1_HEADER.unpack_from(blob)
    if magic != LLR1_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {LLR1_MAGIC!r}")
    expected = _LLR1_HEADER.size + 4 * h * w
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {h}x{w} frame, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=_LLR1_HEADER.size).reshape(h, w).astype(DTYPE)
    return RawFile(BayerFrame(data), float(exp_in), float(exp_gt))


__all__ = [
    "BayerFrame",
    "CHANNELS",
    "PackedRaw",
    "RawFile",
    "amplify",
    "mosaic_rggb",
    "pack_bayer",
    "preprocess",
    "read_llr1",
    "rgb_preview",
    "space_to_depth_tensor",
    "subtract_black_level",
    "unpack_bayer",
    "write_llr1",
]
