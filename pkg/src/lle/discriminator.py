"""Markovian PatchGAN discriminator with a 70x70 receptive field.

Five 4x4 convolutions with padding 1::

    layer   stride  channels
    conv0   2       b
    conv1   2       2b
    conv2   2       4b
    conv3   1       8b
    conv4   1       1      (logits, no activation)

Layers 0-3 use leaky ReLU(0.2). Conditioning concatenates a nearest-neighbour
RGB preview of the packed raw input in front of the candidate image.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParamSet, add_conv
from .rawproc import rgb_preview
from .tensor import Rng, ShapeError, Tensor, ops

KERNEL = 4
PADDING = 1
STRIDES = (2, 2, 2, 1, 1)
MULTIPLIERS = (1, 2, 4, 8)
DEFAULT_SPEC = tuple((KERNEL, s) for s in STRIDES)


@dataclass
class DiscriminatorConfig:
    base_channels: int = 16
    conditional: bool = True
    leaky_slope: float = 0.2

    @property
    def in_channels(self) -> int:
        return 6 if self.conditional else 3

    def channels(self) -> list[int]:
        return [self.base_channels * m for m in MULTIPLIERS] + [1]


class DiscriminatorParams(ParamSet):
    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config


def build_discriminator(config: DiscriminatorConfig, rng: Rng) -> DiscriminatorParams:
    if config.base_channels < 1:
        raise ValueError(f"base_channels must be >= 1, got {config.base_channels}")
    ps = DiscriminatorParams(config)
    c_in = config.in_channels
    for i, c in enumerate(config.channels()):
        add_conv(ps, rng, f"conv{i}", c_in, c, KERNEL)
        c_in = c
    return ps


def parameter_count(config: DiscriminatorConfig) -> int:
    total, c_in = 0, config.in_channels
    for c in config.channels():
        total += (c_in * KERNEL * KERNEL + 1) * c
        c_in = c
    return total


def receptive_field(layer_spec=DEFAULT_SPEC) -> int:
    """Receptive field of a conv stack given as ``[(kernel, stride), ...]``."""
    r, jump = 1, 1
    for k, s in layer_spec:
        r += (k - 1) * jump
        jump *= s
    return r


def output_size(size: int, layer_spec=DEFAULT_SPEC, padding: int = PADDING) -> int:
    for k, s in layer_spec:
        size = (size + 2 * padding - k) // s + 1
    return size


def field_of_output(i: int, layer_spec=DEFAULT_SPEC, padding: int = PADDING) -> tuple[int, int]:
    """Inclusive input index range read by output element ``i`` (may extend into padding)."""
    lo = hi = i
    for k, s in reversed(layer_spec):
        lo, hi = lo * s - padding, hi * s - padding + k - 1
    return lo, hi


def conditional_input(x_packed, image: Tensor) -> Tensor:
    """Concatenate the raw preview (no gradient) before ``image`` along channels."""
    xp = x_packed.data if isinstance(x_packed, Tensor) else np.asarray(x_packed)
    preview = Tensor(rgb_preview(xp))
    return ops.concat_channels(preview, image)


def discriminator_forward(params: DiscriminatorParams, image: Tensor) -> Tensor:
    """Logit map [N,1,n,n]; no final sigmoid."""
    cfg = params.config
    if image.data.ndim != 4 or image.shape[1] != cfg.in_channels:
        raise ShapeError(f"discriminator expects [N,{cfg.in_channels},H,W], got {image.shape}")
    rf = receptive_field()
    if min(image.shape[2:]) < rf:
        raise ShapeError(f"discriminator input {image.shape[2]}x{image.shape[3]} is smaller than its {rf}x{rf} receptive field")
    feat = image
    last = len(STRIDES) - 1
    for i, s in enumerate(STRIDES):
        feat = ops.conv2d(feat, params[f"conv{i}.w"], params[f"conv{i}.b"], stride=s, padding=PADDING)
        if i < last:
            feat = ops.leaky_relu(feat, cfg.leaky_slope)
    return feat
