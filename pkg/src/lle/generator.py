"""Attention-gated U-Net generator: packed raw [N,4,h,w] -> sRGB [N,3,2h,2w].

Architecture for ``levels = L`` and ``base_channels = b`` (``c_i = b * 2**i``)::

    enc{i}.conv1   3x3  in_i -> c_i      (in_0 = 4, in_i = c_{i-1})
    enc{i}.conv2   3x3  c_i  -> c_i      then 2x2 max pool (except at i = L-1)
    for i = L-2 .. 0:
      up{i}        2x2 stride-2 transposed conv  c_{i+1} -> c_i
      gate{i}.wx   1x1  c_i -> m_i  (no bias)    m_i = max(1, c_i // 2)
      gate{i}.wg   1x1  c_i -> m_i  + bias gate{i}.wg.b
      gate{i}.psi  1x1  m_i -> 1    + bias
      dec{i}.conv1 3x3  2 c_i -> c_i   (input: [gated skip, upsampled])
      dec{i}.conv2 3x3  c_i -> c_i
    head           1x1  c_0 -> 12, then depth-to-space -> 3 channels

Every 3x3 conv is followed by a leaky ReLU; the head is linear.
Parameters are created (and stored) in exactly the order listed above.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParamSet, add_conv, he_normal
from .tensor import DTYPE, Rng, ShapeError, Tensor, ops, tick


@dataclass
class GeneratorConfig:
    levels: int = 4
    base_channels: int = 16
    leaky_slope: float = 0.2
    use_attention: bool = True

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")

    def channels(self, i: int) -> int:
        return self.base_channels * 2**i

    @property
    def stride_requirement(self) -> int:
        """Packed-input spatial dims must be a multiple of this."""
        return 2 ** (self.levels - 1)


DESK = GeneratorConfig(levels=4, base_channels=16)
FULL_SCALE = GeneratorConfig(levels=5, base_channels=32)


@dataclass
class AttentionGateParams:
    wx: Tensor
    wg: Tensor
    b: Tensor
    psi_w: Tensor
    psi_b: Tensor


class GeneratorParams(ParamSet):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config

    @property
    def has_gates(self) -> bool:
        return "gate0.wx.w" in self

    def gate(self, i: int) -> AttentionGateParams:
        p = f"gate{i}"
        return AttentionGateParams(self[f"{p}.wx.w"], self[f"{p}.wg.w"], self[f"{p}.wg.b"], self[f"{p}.psi.w"], self[f"{p}.psi.b"])


def gate_channels(c: int) -> int:
    return max(1, c // 2)


def build_generator(config: GeneratorConfig, rng: Rng) -> GeneratorParams:
    """He-normal weights, zero biases. Gates are built only when ``use_attention``."""
    ps = GeneratorParams(config)
    c_in = 4
    for i in range(config.levels):
        c = config.channels(i)
        add_conv(ps, rng, f"enc{i}.conv1", c_in, c, 3)
        add_conv(ps, rng, f"enc{i}.conv2", c, c, 3)
        c_in = c
    for i in reversed(range(config.levels - 1)):
        c, c_up = config.channels(i), config.channels(i + 1)
        # non-overlapping deconv: each output pixel sees c_up inputs
        ps.add(f"up{i}.w", he_normal(rng, (c_up, c, 2, 2), c_up))
        ps.add(f"up{i}.b", np.zeros(c, DTYPE))
        if config.use_attention:
            m = gate_channels(c)
            add_conv(ps, rng, f"gate{i}.wx", c, m, 1, bias=False)
            add_conv(ps, rng, f"gate{i}.wg", c, m, 1)
            add_conv(ps, rng, f"gate{i}.psi", m, 1, 1)
        add_conv(ps, rng, f"dec{i}.conv1", 2 * c, c, 3)
        add_conv(ps, rng, f"dec{i}.conv2", c, c, 3)
    add_conv(ps, rng, "head", config.channels(0), 12, 1)
    return ps


def parameter_count(config: GeneratorConfig) -> int:
    """Closed-form size of ``build_generator(config)``."""
    total, c_in = 0, 4
    for i in range(config.levels):
        c = config.channels(i)
        total += (c_in * 9 + 1) * c + (c * 9 + 1) * c
        c_in = c
    for i in range(config.levels - 1):
        c, c_up = config.channels(i), config.channels(i + 1)
        total += c_up * c * 4 + c
        if config.use_attention:
            m = gate_channels(c)
            total += c * m + (c * m + m) + (m + 1)
        total += (2 * c * 9 + 1) * c + (c * 9 + 1) * c
    return total + (config.channels(0) + 1) * 12


def attention_gate(x_l: Tensor, g: Tensor, params: AttentionGateParams) -> tuple[Tensor, Tensor]:
    """Additive attention: map = sigmoid(psi(relu(Wx x + Wg g + b)) + b_psi); gated = x * map."""
    if x_l.shape[0] != g.shape[0] or x_l.shape[2:] != g.shape[2:]:
        raise ShapeError(f"attention_gate: skip {x_l.shape} and gating {g.shape} are not spatially aligned")
    inter = ops.relu(ops.add(ops.conv2d(x_l, params.wx), ops.conv2d(g, params.wg, params.b)))
    attn = ops.sigmoid(ops.conv2d(inter, params.psi_w, params.psi_b))
    return ops.mul_channels(x_l, attn), attn


def _conv_act(x: Tensor, params: ParamSet, name: str, slope: float) -> Tensor:
    return ops.leaky_relu(ops.conv2d(x, params[f"{name}.w"], params[f"{name}.b"], 1, 1), slope)


def generator_forward(
    params: GeneratorParams,
    x: Tensor,
    use_attention: bool | None = None,
    force_unit_maps: bool = False,
) -> tuple[Tensor, list[Tensor]]:
    """Run the generator once.

    Returns the linear sRGB prediction and one attention map per skip
    connection, ordered from the finest level (0) to the coarsest.
    With attention disabled the skips pass through unchanged and the
    returned maps are all ones. ``force_unit_maps`` keeps the gated code
    path but replaces every map by ones (used to check that equivalence).
    """
    cfg = params.config
    if use_attention is None:
        use_attention = cfg.use_attention
    if use_attention and not params.has_gates:
        raise ValueError("attention requested but the parameters contain no gates")
    if x.data.ndim != 4 or x.shape[1] != 4:
        raise ShapeError(f"generator input must be [N,4,h,w], got {x.shape}")
    n, _, h, w = x.shape
    req = cfg.stride_requirement
    if h % req or w % req or h == 0 or w == 0:
        raise ShapeError(f"generator input {h}x{w} must be divisible by {req} (levels={cfg.levels})")
    tick("generator_forward")

    slope = cfg.leaky_slope
    skips = []
    feat = x
    for i in range(cfg.levels):
        feat = _conv_act(feat, params, f"enc{i}.conv1", slope)
        feat = _conv_act(feat, params, f"enc{i}.conv2", slope)
        if i < cfg.levels - 1:
            skips.append(feat)
            feat = ops.maxpool2(feat)

    maps: list[Tensor] = [None] * (cfg.levels - 1)
    for i in reversed(range(cfg.levels - 1)):
        up = ops.conv_transpose2d(feat, params[f"up{i}.w"], params[f"up{i}.b"], stride=2)
        skip = skips[i]
        if use_attention and force_unit_maps:
            unit = Tensor(np.ones((n, 1) + skip.shape[2:], DTYPE))
            skip, maps[i] = ops.mul_channels(skip, unit), unit
        elif use_attention:
            skip, maps[i] = attention_gate(skip, up, params.gate(i))
        else:
            maps[i] = Tensor(np.ones((n, 1) + skip.shape[2:], DTYPE))
        feat = ops.concat_channels(skip, up)
        feat = _conv_act(feat, params, f"dec{i}.conv1", slope)
        feat = _conv_act(feat, params, f"dec{i}.conv2", slope)

    out = ops.conv2d(feat, params["head.w"], params["head.b"])
    return ops.depth_to_space2(out), maps


def enhance(params: GeneratorParams, x: Tensor) -> np.ndarray:
    """Inference helper: forward pass, clamp to [0, 1], return [N,3,H,W] array."""
    y, _ = generator_forward(params, x)
    return np.clip(y.data, 0.0, 1.0)
