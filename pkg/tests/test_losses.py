import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lle.losses import (
    DESK_MS_SSIM,
    FULL_MS_SSIM,
    LossWeights,
    MsSsimConfig,
    adv_loss_discriminator,
    adv_loss_generator,
    gaussian_taps,
    ms_ssim,
    reconstruction_loss,
    ssim,
    total_generator_objective,
)
from lle.tensor import ShapeError, Tensor
from gradcheck import check_gradients
from oracles import gaussian_window, naive_ssim

f32 = np.float32


def img(shape, seed, lo=0.0, hi=1.0, grad=False):
    return Tensor(np.random.default_rng(seed).uniform(lo, hi, shape).astype(f32), requires_grad=grad)


def const(shape, v):
    return Tensor(np.full(shape, v, f32))


# ------------------------------------------------------------- adversarial

def test_d_loss_at_indifference():
    z = const((1, 1, 6, 6), 0.0)
    assert adv_loss_discriminator(z, z).item() == pytest.approx(2 * math.log(2), abs=1e-6)


def test_d_loss_saturated():
    assert adv_loss_discriminator(const((1, 1, 3, 3), 30.0), const((1, 1, 3, 3), -30.0)).item() < 1e-12


def test_d_loss_matches_log_sigmoid_formula():
    rng = np.random.default_rng(0)
    r = rng.uniform(-10, 10, (1, 1, 8, 8))
    f = rng.uniform(-10, 10, (1, 1, 8, 8))
    sig = lambda z: 1 / (1 + np.exp(-z))  # noqa: E731
    want = -np.mean(np.log(sig(r)) + np.log(1 - sig(f)))
    got = adv_loss_discriminator(Tensor(r), Tensor(f)).item()
    assert got == pytest.approx(want, abs=1e-5)


def test_d_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        adv_loss_discriminator(const((1, 1, 2, 2), 0), const((1, 1, 3, 3), 0))


def test_g_loss_values():
    assert adv_loss_generator(const((1, 1, 4, 4), 0.0)).item() == pytest.approx(math.log(2), abs=1e-6)
    assert adv_loss_generator(const((1, 1, 4, 4), 30.0)).item() < 1e-12


def test_g_loss_gradient():
    logits = Tensor(np.random.default_rng(1).uniform(-4, 4, (1, 1, 11, 11)).astype(f32), requires_grad=True)
    err, n = check_gradients(adv_loss_generator, [logits])
    assert n >= 100 and err <= 1e-3


def test_d_loss_gradient():
    rng = np.random.default_rng(2)
    r = Tensor(rng.uniform(-4, 4, (1, 1, 8, 8)).astype(f32), requires_grad=True)
    f = Tensor(rng.uniform(-4, 4, (1, 1, 8, 8)).astype(f32), requires_grad=True)
    err, n = check_gradients(adv_loss_discriminator, [r, f])
    assert n >= 100 and err <= 1e-3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adv_losses_non_negative(seed):
    rng = np.random.default_rng(seed)
    r, f = (Tensor(rng.uniform(-20, 20, (1, 1, 4, 4))) for _ in range(2))
    assert adv_loss_discriminator(r, f).item() >= 0
    assert adv_loss_generator(f).item() >= 0


# ------------------------------------------------------------------- SSIM

def test_gaussian_taps_match_window_oracle():
    t = gaussian_taps().astype(np.float64)
    np.testing.assert_allclose(np.outer(t, t), gaussian_window(), atol=1e-7)


def test_ssim_identity():
    x = img((1, 3, 24, 24), 0)
    assert ssim(x, x).item() == pytest.approx(1.0, abs=1e-6)


def test_ssim_constant_images():
    got = ssim(const((1, 1, 16, 16), 0.0), const((1, 1, 16, 16), 1.0)).item()
    c1 = 1e-4
    assert got == pytest.approx(c1 / (1 + c1), rel=1e-3)


@pytest.mark.parametrize("seed", range(3))
def test_ssim_matches_naive_oracle(seed):
    a, b = img((1, 2, 20, 20), seed), img((1, 2, 20, 20), seed + 100)
    assert ssim(a, b).item() == pytest.approx(naive_ssim(a.data, b.data), abs=1e-5)


def test_ssim_rejects_small():
    with pytest.raises(ShapeError):
        ssim(img((1, 1, 10, 10), 0), img((1, 1, 10, 10), 1))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ssim_symmetric_and_bounded(seed):
    a, b = img((1, 3, 16, 16), seed), img((1, 3, 16, 16), seed + 1)
    s_ab, s_ba = ssim(a, b).item(), ssim(b, a).item()
    assert s_ab == pytest.approx(s_ba, abs=1e-6)
    assert s_ab <= 1.0


def test_ssim_gradient():
    a = img((1, 1, 14, 14), 3, grad=True)
    b = img((1, 1, 14, 14), 4)
    err, n = check_gradients(ssim, [a, b])
    assert n >= 100 and err <= 1e-3


# ----------------------------------------------------------------- MS-SSIM

def test_weights_sum_to_one():
    assert math.fsum(DESK_MS_SSIM.weights) == pytest.approx(1, abs=1e-6)
    assert math.fsum(FULL_MS_SSIM.weights) == pytest.approx(1, abs=1e-6)
    ratio = DESK_MS_SSIM.weights[1] / DESK_MS_SSIM.weights[0]
    assert ratio == pytest.approx(0.2856 / 0.0448)


def test_ms_ssim_identity():
    x = img((1, 3, 48, 48), 1)
    assert ms_ssim(x, x).item() == pytest.approx(1.0, abs=1e-6)


def test_ms_ssim_one_scale_is_ssim():
    a = img((1, 3, 24, 24), 2)
    b = Tensor(np.clip(a.data + np.random.default_rng(3).normal(0, 0.1, a.shape), 0, 1).astype(f32))
    cfg = MsSsimConfig(scales=1)
    assert ms_ssim(a, b, cfg).item() == pytest.approx(ssim(a, b, cfg).item(), abs=1e-6)


def test_ms_ssim_monotone_in_noise():
    base = np.linspace(0, 1, 64 * 64, dtype=f32).reshape(1, 1, 64, 64).repeat(3, axis=1)
    noise = np.random.default_rng(5).standard_normal(base.shape).astype(f32)
    x = Tensor(base)
    vals = [ms_ssim(x, Tensor(base + e * noise)).item() for e in (0.01, 0.05, 0.1)]
    assert vals[0] > vals[1] > vals[2]


def test_ms_ssim_rejects_small():
    with pytest.raises(ShapeError, match="required 44"):
        ms_ssim(img((1, 3, 40, 40), 0), img((1, 3, 40, 40), 1))


def test_ms_ssim_symmetric():
    a, b = img((1, 3, 48, 48), 7), img((1, 3, 48, 48), 8)
    assert ms_ssim(a, b).item() == pytest.approx(ms_ssim(b, a).item(), abs=1e-6)


def test_ms_ssim_gradient():
    base = np.random.default_rng(9).uniform(0.2, 0.8, (1, 1, 44, 44)).astype(f32)
    a = Tensor(base, requires_grad=True)
    b = Tensor(np.clip(base + np.random.default_rng(10).normal(0, 0.05, base.shape), 0, 1).astype(f32))
    err, n = check_gradients(ms_ssim, [a, b])
    assert n >= 100 and err <= 1e-3


# -------------------------------------------------------------- composites

def test_reconstruction_zero_on_identical():
    y = img((1, 3, 48, 48), 0)
    assert reconstruction_loss(y, y).item() == pytest.approx(0.0, abs=1e-6)


def test_reconstruction_pure_l1():
    w = LossWeights(lambda_1=2.5, lambda_ms=0.0)
    got = reconstruction_loss(const((1, 3, 8, 8), 0.5), const((1, 3, 8, 8), 0.6), w).item()
    assert got == pytest.approx(0.1 * 2.5, abs=1e-6)


def test_reconstruction_ms_only_identical():
    y = img((1, 3, 48, 48), 1)
    assert reconstruction_loss(y, y, LossWeights(lambda_1=0.0)).item() == pytest.approx(0.0, abs=1e-6)


def test_reconstruction_shape_mismatch():
    with pytest.raises(ShapeError):
        reconstruction_loss(img((1, 3, 8, 8), 0), img((1, 3, 8, 6), 0))


def test_reconstruction_gradient():
    base = np.random.default_rng(11).uniform(0.2, 0.8, (1, 1, 44, 44)).astype(f32)
    y = Tensor(base)
    y_hat = Tensor(np.clip(base + np.random.default_rng(12).normal(0, 0.05, base.shape), 0, 1).astype(f32), requires_grad=True)
    err, n = check_gradients(lambda a, b: reconstruction_loss(a, b), [y, y_hat])
    assert n >= 100 and err <= 1e-3


def test_total_objective():
    s = lambda v: Tensor(np.array(v, f32))  # noqa: E731
    w = LossWeights()
    assert total_generator_objective(s(0.6931), s(0.0), w).item() == pytest.approx(0.6931, abs=1e-7)
    assert total_generator_objective(s(0.0), s(0.01), w).item() == pytest.approx(1.0, abs=1e-6)
    one = total_generator_objective(s(0.0), s(0.02), w).item()
    assert one == pytest.approx(2 * total_generator_objective(s(0.0), s(0.01), w).item(), rel=1e-7)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_1=-1)
