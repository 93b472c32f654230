"""Differentiable operations on :class:`Tensor`.

Every op validates shapes, computes its output with numpy in float32 and
registers a backward rule via :func:`record`. No op broadcasts implicitly;
the two sanctioned exceptions are the per-channel bias inside ``conv2d`` /
``conv_transpose2d`` and the single-channel map in ``mul_channels``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import DTYPE, NonFiniteError, ShapeError, Tensor, record
from .instrument import tick


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _need4(op: str, t: Tensor, what: str = "input") -> None:
    if t.data.ndim != 4:
        raise ShapeError(f"{op}: {what} must be 4-D [N,C,H,W], got shape {t.shape}")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    tick("add")
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    tick("sub")
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    tick("mul")
    ad, bd = a.data, b.data
    return record("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("div", a, b)
    tick("div")
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        gb = g / bd
        return gb, -gb * out

    return record("div", out, (a, b), back)


def scale(t: Tensor, c: float) -> Tensor:
    tick("scale")
    c = DTYPE(c)
    return record("scale", t.data * c, (t,), lambda g: (g * c,))


def add_scalar(t: Tensor, c: float) -> Tensor:
    tick("add_scalar")
    return record("add_scalar", t.data + DTYPE(c), (t,), lambda g: (g,))


def leaky_relu(t: Tensor, slope: float = 0.2) -> Tensor:
    tick("leaky_relu")
    pos = t.data > 0
    slope = DTYPE(slope)
    out = np.where(pos, t.data, t.data * slope)
    return record("leaky_relu", out, (t,), lambda g: (np.where(pos, g, g * slope),))


def relu(t: Tensor) -> Tensor:
    tick("relu")
    pos = t.data > 0
    return record("relu", np.where(pos, t.data, DTYPE(0)), (t,), lambda g: (np.where(pos, g, DTYPE(0)),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e)).astype(DTYPE)


# float32 sigmoid rounds to exactly 0 or 1 for |z| beyond ~17 (top) or ~104
# (bottom); keep outputs inside the open interval so gates never fully close
_SIGMOID_LO = np.finfo(DTYPE).tiny
_SIGMOID_HI = DTYPE(1) - np.finfo(DTYPE).epsneg


def sigmoid(t: Tensor) -> Tensor:
    """Logistic function, clamped to the float32 open interval (0, 1)."""
    tick("sigmoid")
    s = np.clip(_sigmoid(t.data), _SIGMOID_LO, _SIGMOID_HI)
    return record("sigmoid", s, (t,), lambda g: (g * s * (1 - s),))


def softplus(t: Tensor) -> Tensor:
    """log(1 + exp(z)), evaluated without overflow."""
    tick("softplus")
    z = t.data
    out = (np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))).astype(DTYPE)
    return record("softplus", out, (t,), lambda g: (g * _sigmoid(z),))


def power(t: Tensor, p: float) -> Tensor:
    """Elementwise ``t ** p`` for strictly positive ``t``."""
    if np.any(t.data <= 0):
        raise ValueError("power: base must be strictly positive")
    tick("power")
    p = DTYPE(p)
    out = np.power(t.data, p)
    return record("power", out, (t,), lambda g: (g * p * out / t.data,))


def clamp_min(t: Tensor, lo: float) -> Tensor:
    tick("clamp_min")
    keep = t.data >= lo
    out = np.where(keep, t.data, DTYPE(lo))
    return record("clamp_min", out, (t,), lambda g: (np.where(keep, g, DTYPE(0)),))


# ----------------------------------------------------------------- reductions

def sum(t: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    tick("sum")
    shape = t.shape
    return record("sum", np.asarray(t.data.sum(dtype=DTYPE)), (t,), lambda g: (np.full(shape, g, DTYPE),))


def mean(t: Tensor) -> Tensor:
    tick("mean")
    shape, n = t.shape, t.size
    return record(
        "mean", np.asarray(t.data.mean(dtype=DTYPE)), (t,), lambda g: (np.full(shape, g / DTYPE(n), DTYPE),)
    )


def abs_mean(a: Tensor, b: Tensor) -> Tensor:
    """mean(|a - b|)"""
    _same_shape("abs_mean", a, b)
    tick("abs_mean")
    diff = a.data - b.data
    n = DTYPE(diff.size)

    def back(g):
        ga = np.sign(diff).astype(DTYPE) * (g / n)
        return ga, -ga

    return record("abs_mean", np.asarray(np.abs(diff).mean(dtype=DTYPE)), (a, b), back)


# ------------------------------------------------------------------ structure

def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _need4("concat_channels", a, "a")
    _need4("concat_channels", b, "b")
    (n, c1, h, w), (n2, c2, h2, w2) = a.shape, b.shape
    if (n, h, w) != (n2, h2, w2):
        raise ShapeError(f"concat_channels: N/H/W mismatch {a.shape} vs {b.shape}")
    tick("concat_channels")
    out = np.concatenate([a.data, b.data], axis=1)
    return record("concat_channels", out, (a, b), lambda g: (g[:, :c1], g[:, c1:]))


def depth_to_space2(t: Tensor) -> Tensor:
    """[N,4C,H,W] -> [N,C,2H,2W]; channel 4c+2a+b lands at offset (a,b) of each 2x2 block."""
    _need4("depth_to_space2", t)
    n, c4, h, w = t.shape
    if c4 % 4:
        raise ShapeError(f"depth_to_space2: channel count {c4} not divisible by 4")
    tick("depth_to_space2")
    c = c4 // 4
    out = t.data.reshape(n, c, 2, 2, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, 2 * h, 2 * w)

    def back(g):
        return (g.reshape(n, c, h, 2, w, 2).transpose(0, 1, 3, 5, 2, 4).reshape(n, c4, h, w),)

    return record("depth_to_space2", out, (t,), back)


def mul_channels(x: Tensor, m: Tensor) -> Tensor:
    """Scale every channel of ``x`` [N,C,H,W] by the single-channel map ``m`` [N,1,H,W]."""
    _need4("mul_channels", x, "x")
    _need4("mul_channels", m, "map")
    if m.shape[1] != 1 or m.shape[0] != x.shape[0] or m.shape[2:] != x.shape[2:]:
        raise ShapeError(f"mul_channels: map {m.shape} does not match features {x.shape}")
    tick("mul_channels")
    xd, md = x.data, m.data
    return record(
        "mul_channels", xd * md, (x, m), lambda g: (g * md, (g * xd).sum(axis=1, keepdims=True))
    )


def maxpool2(t: Tensor) -> Tensor:
    """2x2 max pool, stride 2. Ties send the gradient to the first element in row-major order."""
    _need4("maxpool2", t)
    n, c, h, w = t.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: spatial size {h}x{w} must be even")
    tick("maxpool2")
    win = t.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def back(g):
        gw = np.zeros((n, c, h // 2, w // 2, 4), DTYPE)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        return (gw.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return record("maxpool2", out, (t,), back)


def avgpool2(t: Tensor) -> Tensor:
    """2x2 mean pool, stride 2; a trailing odd row/column is dropped."""
    _need4("avgpool2", t)
    n, c, h, w = t.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise ShapeError(f"avgpool2: input {h}x{w} too small")
    tick("avgpool2")
    crop = t.data[:, :, : 2 * h2, : 2 * w2]
    out = crop.reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5), dtype=DTYPE)

    def back(g):
        gi = np.zeros((n, c, h, w), DTYPE)
        q = np.repeat(np.repeat(g * DTYPE(0.25), 2, axis=2), 2, axis=3)
        gi[:, :, : 2 * h2, : 2 * w2] = q
        return (gi,)

    return record("avgpool2", out, (t,), back)


# --------------------------------------------------------------- convolutions

def _check_finite(op: str, x: np.ndarray) -> None:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{op}: input contains NaN or Inf")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding; output [N,F,H',W'], H' = (H+2p-k)//s + 1."""
    _need4("conv2d", x)
    _need4("conv2d", weight, "weight")
    n, c, h, w = x.shape
    f, cw, k, k2 = weight.shape
    if cw != c:
        raise ShapeError(f"conv2d: input has {c} channels but weight {weight.shape} expects {cw}")
    if k != k2 or k < 1:
        raise ShapeError(f"conv2d: kernel must be square and >= 1, got {k}x{k2}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: stride must be >= 1 and padding >= 0 (got {stride}, {padding})")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(f"conv2d: padded input {h + 2 * padding}x{w + 2 * padding} smaller than kernel {k}")
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({f},)")
    _check_finite("conv2d", x.data)
    tick("conv2d")

    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    if k == 1 and stride == 1:
        cols = xp.transpose(1, 0, 2, 3).reshape(c, n * ho * wo)
    else:
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * ho * wo)
    wm = weight.data.reshape(f, c * k * k)
    out = (wm @ cols).reshape(f, n, ho, wo).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(f, n * ho * wo)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = wm.T @ g2
            if k == 1 and stride == 1:
                gx = dcols.reshape(c, n, ho, wo).transpose(1, 0, 2, 3)
            else:
                dcols = dcols.reshape(c, k, k, n, ho, wo)
                hp, wp = h + 2 * padding, w + 2 * padding
                gxp = np.zeros((n, c, hp, wp), DTYPE)
                span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i : i + span_h : stride, j : j + span_w : stride] += dcols[:, i, j].transpose(1, 0, 2, 3)
                gx = gxp[:, :, padding : padding + h, padding : padding + w]
            if padding and k == 1 and stride == 1:
                gx = gx[:, :, padding : padding + h, padding : padding + w]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return record("conv2d", out, inputs, back)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 2) -> Tensor:
    """Non-overlapping transposed convolution (kernel == stride): [N,C,H,W] -> [N,F,sH,sW]."""
    _need4("conv_transpose2d", x)
    _need4("conv_transpose2d", weight, "weight")
    n, c, h, w = x.shape
    cw, f, k, k2 = weight.shape
    if cw != c:
        raise ShapeError(f"conv_transpose2d: input has {c} channels but weight {weight.shape} expects {cw}")
    if k != k2 or k != stride:
        raise ValueError(f"conv_transpose2d: only kernel == stride is supported (kernel {k}x{k2}, stride {stride})")
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"conv_transpose2d: bias shape {bias.shape} != ({f},)")
    _check_finite("conv_transpose2d", x.data)
    tick("conv_transpose2d")

    xm = x.data.transpose(1, 0, 2, 3).reshape(c, n * h * w)
    wm = weight.data.reshape(c, f * k * k)
    out = (wm.T @ xm).reshape(f, k, k, n, h, w).transpose(3, 0, 4, 1, 5, 2).reshape(n, f, h * k, w * k)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        g2 = g.reshape(n, f, h, k, w, k).transpose(1, 3, 5, 0, 2, 4).reshape(f * k * k, n * h * w)
        gx = (wm @ g2).reshape(c, n, h, w).transpose(1, 0, 2, 3) if x.requires_grad else None
        gw = (xm @ g2.T).reshape(weight.shape) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return record("conv_transpose2d", out, inputs, back)


def separable_filter_valid(x: Tensor, taps) -> Tensor:
    """Per-channel 2-D correlation with ``outer(taps, taps)``, no padding."""
    _need4("separable_filter_valid", x)
    taps = np.asarray(taps, dtype=DTYPE)
    k = taps.size
    n, c, h, w = x.shape
    if h < k or w < k:
        raise ShapeError(f"separable_filter_valid: input {h}x{w} smaller than {k}-tap window")
    tick("separable_filter_valid")
    ho, wo = h - k + 1, w - k + 1
    xd = x.data
    tmp = np.zeros((n, c, h, wo), DTYPE)
    for t in range(k):
        tmp += taps[t] * xd[:, :, :, t : t + wo]
    out = np.zeros((n, c, ho, wo), DTYPE)
    for t in range(k):
        out += taps[t] * tmp[:, :, t : t + ho, :]

    def back(g):
        gt = np.zeros((n, c, h, wo), DTYPE)
        for t in range(k):
            gt[:, :, t : t + ho, :] += taps[t] * g
        gx = np.zeros((n, c, h, w), DTYPE)
        for t in range(k):
            gx[:, :, :, t : t + wo] += taps[t] * gt
        return (gx,)

    return record("separable_filter_valid", out, (x,), back)
