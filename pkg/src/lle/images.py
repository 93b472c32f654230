"""PNG I/O for [1,3,H,W] float images in [0, 1] and single-channel maps.

OpenCV stores colour as BGR; conversion happens here and nowhere else.
"""
from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from .tensor import DTYPE, ShapeError, tick

_MAX = {8: 255, 16: 65535}


def _quantize(arr: np.ndarray, bits: int) -> np.ndarray:
    if bits not in _MAX:
        raise ValueError(f"bit depth must be 8 or 16, got {bits}")
    q = np.rint(np.clip(arr.astype(np.float64), 0.0, 1.0) * _MAX[bits])
    return q.astype(np.uint8 if bits == 8 else np.uint16)


def write_png(path, image: np.ndarray, bits: int = 16) -> None:
    """Write a [1,3,H,W] (or [3,H,W]) image; values are clipped to [0, 1]."""
    arr = np.asarray(image)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ShapeError(f"write_png takes a single image, got batch of {arr.shape[0]}")
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"expected [3,H,W] image, got {arr.shape}")
    tick("io_write")
    bgr = _quantize(arr.transpose(1, 2, 0)[:, :, ::-1], bits)
    if not cv2.imwrite(str(path), np.ascontiguousarray(bgr)):
        raise OSError(f"{path}: could not write PNG")


def write_gray_png(path, image: np.ndarray) -> None:
    """8-bit grayscale; value v in [0, 1] maps linearly to round(255 v)."""
    arr = np.squeeze(np.asarray(image))
    if arr.ndim != 2:
        raise ShapeError(f"expected a single-channel map, got {np.asarray(image).shape}")
    tick("io_write")
    if not cv2.imwrite(str(path), _quantize(arr, 8)):
        raise OSError(f"{path}: could not write PNG")


def read_png(path) -> np.ndarray:
    """Read an 8- or 16-bit PNG as a [1,3,H,W] float32 array in [0, 1]."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{p}: no such image")
    tick("io_read")
    arr = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise OSError(f"{p}: not a readable image")
    if arr.dtype == np.uint8:
        scale = 255.0
    elif arr.dtype == np.uint16:
        scale = 65535.0
    else:
        raise OSError(f"{p}: unsupported pixel type {arr.dtype}")
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    elif arr.shape[2] == 4:
        arr = arr[:, :, :3]
    rgb = arr[:, :, ::-1].transpose(2, 0, 1)[None]
    return (rgb.astype(np.float64) / scale).astype(DTYPE)
