"""Full-frame inference: raw frame + exposure ratio -> sRGB image and attention maps."""
from __future__ import annotations

import numpy as np

from .generator import GeneratorParams, generator_forward
from .rawproc import BayerFrame, preprocess
from .tensor import ShapeError


def check_frame_size(params: GeneratorParams, height: int, width: int) -> None:
    need = 2 * params.config.stride_requirement
    if height % need or width % need:
        pad_h, pad_w = -height % need, -width % need
        raise ShapeError(
            f"frame {height}x{width} is not a multiple of {need}; pad it by {pad_h} rows and "
            f"{pad_w} columns (to {height + pad_h}x{width + pad_w})"
        )


def enhance_frame(params: GeneratorParams, frame: BayerFrame, alpha: float) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns the clamped image [1,3,H,W] and one map per gate, finest first."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    check_frame_size(params, frame.height, frame.width)
    x = preprocess(frame, alpha)
    y, maps = generator_forward(params, x)
    return np.clip(y.data, 0.0, 1.0), [m.data for m in maps]
