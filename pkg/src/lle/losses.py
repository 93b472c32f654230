"""Training objectives: conditional adversarial terms, L1 + MS-SSIM reconstruction."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import DTYPE, ShapeError, Tensor, ops

# Wang, Simoncelli & Bovik five-scale exponents (they sum to 1.0001 as published)
MS_SSIM_WEIGHTS_5 = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass
class LossWeights:
    lambda_1: float = 1.0
    lambda_ms: float = 1.0
    lambda_total: float = 100.0

    def __post_init__(self):
        if min(self.lambda_1, self.lambda_ms, self.lambda_total) < 0:
            raise ValueError(f"loss weights must be non-negative: {self}")


def _normalized(ws) -> tuple[float, ...]:
    s = math.fsum(ws)
    return tuple(w / s for w in ws)


@dataclass
class MsSsimConfig:
    scales: int = 3
    weights: tuple[float, ...] | None = None
    window: int = 11
    sigma: float = 1.5
    c1: float = 0.01**2
    c2: float = 0.03**2
    taps: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 1 <= self.scales <= len(MS_SSIM_WEIGHTS_5) and self.weights is None:
            raise ValueError(f"scales must be in 1..5 without explicit weights, got {self.scales}")
        if self.weights is None:
            self.weights = _normalized(MS_SSIM_WEIGHTS_5[: self.scales])
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != self.scales:
            raise ValueError(f"{len(self.weights)} weights for {self.scales} scales")
        if abs(math.fsum(self.weights) - 1.0) > 1e-6:
            raise ValueError(f"MS-SSIM weights must sum to 1, got {math.fsum(self.weights)}")
        self.taps = gaussian_taps(self.window, self.sigma)

    @property
    def min_size(self) -> int:
        return self.window * 2 ** (self.scales - 1)


def gaussian_taps(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return (g / g.sum()).astype(DTYPE)


DESK_MS_SSIM = MsSsimConfig(scales=3)
FULL_MS_SSIM = MsSsimConfig(scales=5)


# ------------------------------------------------------------- adversarial

def adv_loss_discriminator(d_real_logits: Tensor, d_fake_logits: Tensor) -> Tensor:
    """mean[softplus(-real) + softplus(fake)] == -mean[log D(real) + log(1 - D(fake))]."""
    if d_real_logits.shape != d_fake_logits.shape:
        raise ShapeError(f"real/fake logit maps differ: {d_real_logits.shape} vs {d_fake_logits.shape}")
    return ops.mean(ops.add(ops.softplus(ops.scale(d_real_logits, -1.0)), ops.softplus(d_fake_logits)))


def adv_loss_generator(d_fake_logits: Tensor) -> Tensor:
    """Non-saturating generator term: -mean log D(fake)."""
    return ops.mean(ops.softplus(ops.scale(d_fake_logits, -1.0)))


# ------------------------------------------------------------------- SSIM

def _check_pair(a: Tensor, b: Tensor, min_size: int, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    if a.data.ndim != 4:
        raise ShapeError(f"{what}: expected [N,C,H,W], got {a.shape}")
    if min(a.shape[2:]) < min_size:
        raise ShapeError(f"{what}: images {a.shape[2]}x{a.shape[3]} smaller than the required {min_size}")


def _ssim_terms(a: Tensor, b: Tensor, cfg: MsSsimConfig) -> tuple[Tensor, Tensor]:
    """Luminance and contrast-structure maps over the valid window positions.

    Second moments are taken about each image's global mean (a constant, so
    gradients are unaffected); this avoids float32 cancellation in
    E[x^2] - E[x]^2 when local variance is small next to the mean.
    """
    filt = lambda t: ops.separable_filter_valid(t, cfg.taps)  # noqa: E731
    shift_a, shift_b = float(a.data.mean()), float(b.data.mean())
    ac, bc = ops.add_scalar(a, -shift_a), ops.add_scalar(b, -shift_b)
    mu_ac, mu_bc = filt(ac), filt(bc)
    var_a = ops.sub(filt(ops.mul(ac, ac)), ops.mul(mu_ac, mu_ac))
    var_b = ops.sub(filt(ops.mul(bc, bc)), ops.mul(mu_bc, mu_bc))
    cov = ops.sub(filt(ops.mul(ac, bc)), ops.mul(mu_ac, mu_bc))
    mu_a, mu_b = ops.add_scalar(mu_ac, shift_a), ops.add_scalar(mu_bc, shift_b)
    mu_aa, mu_bb, mu_ab = ops.mul(mu_a, mu_a), ops.mul(mu_b, mu_b), ops.mul(mu_a, mu_b)
    lum = ops.div(ops.add_scalar(ops.scale(mu_ab, 2.0), cfg.c1), ops.add_scalar(ops.add(mu_aa, mu_bb), cfg.c1))
    cs = ops.div(ops.add_scalar(ops.scale(cov, 2.0), cfg.c2), ops.add_scalar(ops.add(var_a, var_b), cfg.c2))
    return lum, cs


def ssim(a: Tensor, b: Tensor, config: MsSsimConfig = DESK_MS_SSIM) -> Tensor:
    """Gaussian-window SSIM averaged over batch, channels and valid positions."""
    _check_pair(a, b, config.window, "ssim")
    lum, cs = _ssim_terms(a, b, config)
    return ops.mean(ops.mul(lum, cs))


def ms_ssim(a: Tensor, b: Tensor, config: MsSsimConfig = DESK_MS_SSIM) -> Tensor:
    """Multi-scale SSIM: contrast-structure at every scale, luminance at the coarsest.

    Per-scale factors are floored at 1e-6 before exponentiation so that
    negative correlations cannot produce NaN.
    """
    _check_pair(a, b, config.min_size, "ms_ssim")
    out = None
    for j, w in enumerate(config.weights):
        lum, cs = _ssim_terms(a, b, config)
        if j < config.scales - 1:
            term = ops.mean(cs)
            a, b = ops.avgpool2(a), ops.avgpool2(b)
        else:
            term = ops.mean(ops.mul(lum, cs))
        factor = ops.power(ops.clamp_min(term, 1e-6), w)
        out = factor if out is None else ops.mul(out, factor)
    return out


# -------------------------------------------------------------- composites

def reconstruction_loss(
    y: Tensor, y_hat: Tensor, weights: LossWeights = LossWeights(), config: MsSsimConfig = DESK_MS_SSIM
) -> Tensor:
    """lambda_1 * mean|y - y_hat| + lambda_ms * (1 - MS-SSIM(y, y_hat)); a zero weight skips its term."""
    if y.shape != y_hat.shape:
        raise ShapeError(f"reconstruction_loss: shape mismatch {y.shape} vs {y_hat.shape}")
    total = None
    if weights.lambda_1 > 0:
        total = ops.scale(ops.abs_mean(y, y_hat), weights.lambda_1)
    if weights.lambda_ms > 0:
        term = ops.scale(ops.add_scalar(ops.scale(ms_ssim(y, y_hat, config), -1.0), 1.0), weights.lambda_ms)
        total = term if total is None else ops.add(total, term)
    if total is None:
        total = Tensor(np.zeros((), DTYPE))
    return total


def total_generator_objective(adv_g: Tensor, rec: Tensor, weights: LossWeights = LossWeights()) -> Tensor:
    """adv_g + lambda_total * rec"""
    return ops.add(adv_g, ops.scale(rec, weights.lambda_total))
