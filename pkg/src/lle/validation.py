"""Input checks shared by the estimator API."""
from __future__ import annotations

import numbers

import numpy as np

from .tensor import DTYPE, ShapeError


def check_bayer_batch(X) -> np.ndarray:
    """Raw mosaics as float32 [n, H, W]; a single 2-D frame becomes a batch of one."""
    arr = np.asarray(X, dtype=DTYPE) if not isinstance(X, list) else np.stack([np.asarray(x, DTYPE) for x in X])
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"expected raw frames [n, H, W], got shape {arr.shape}")
    n, h, w = arr.shape
    if n == 0:
        raise ValueError("need at least one frame")
    if h == 0 or w == 0 or h % 2 or w % 2:
        raise ShapeError(f"Bayer frames need even, positive dimensions, got {h}x{w}")
    if not np.isfinite(arr).all():
        raise ValueError("raw frames contain NaN or Inf")
    return np.ascontiguousarray(arr)


def check_rgb_batch(y, n: int, height: int, width: int) -> np.ndarray:
    """Targets [n, H, W, 3] in [0, 1] -> float32 [n, 3, H, W]."""
    arr = np.asarray(y, dtype=DTYPE)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.shape != (n, height, width, 3):
        raise ShapeError(f"expected targets of shape {(n, height, width, 3)}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("targets contain NaN or Inf")
    if arr.min() < 0 or arr.max() > 1:
        raise ValueError(f"targets must lie in [0, 1], got range [{arr.min()}, {arr.max()}]")
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


def check_alpha(alpha, n: int) -> np.ndarray:
    """Scalar or per-frame exposure ratios -> float64 [n], all > 0."""
    if alpha is None:
        raise ValueError("alpha (exposure ratio) is required")
    if isinstance(alpha, numbers.Real):
        arr = np.full(n, float(alpha))
    else:
        arr = np.asarray(alpha, dtype=np.float64).reshape(-1)
        if arr.size == 1:
            arr = np.full(n, float(arr[0]))
    if arr.shape != (n,):
        raise ShapeError(f"expected {n} alpha value(s), got {arr.size}")
    if not (np.isfinite(arr).all() and (arr > 0).all()):
        raise ValueError(f"alpha must be finite and > 0, got {arr}")
    return arr
