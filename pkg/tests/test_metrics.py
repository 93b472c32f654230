import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lle import losses
from lle.images import write_png
from lle.metrics import (
    Report,
    eval_ms_ssim_config,
    evaluate_manifest,
    evaluate_pairs,
    ms_ssim_metric,
    psnr,
    read_pair_manifest,
    ssim_metric,
)
from lle.tensor import ShapeError, Tensor

f32 = np.float32


def const(v, shape=(1, 3, 32, 32), dtype=f32):
    return np.full(shape, v, dtype)


def const64(v, shape=(1, 3, 32, 32)):
    # float32(0.6) is 0.6000000238; analytic dB cases need exact inputs
    return const(v, shape, np.float64)


def rand(seed, shape=(1, 3, 32, 32)):
    return np.random.default_rng(seed).uniform(0, 1, shape).astype(f32)


# -------------------------------------------------------------------- psnr

def test_psnr_constant_case_is_20db():
    assert psnr(const64(0.5), const64(0.6)) == pytest.approx(20.0, abs=1e-9)


def test_psnr_identical_is_inf():
    x = rand(0)
    assert psnr(x, x) == math.inf


def test_psnr_matches_direct_sum():
    a, b = rand(1), rand(2)
    diff = [(float(p) - float(q)) ** 2 for p, q in zip(a.ravel(), b.ravel())]
    want = 10 * math.log10(1.0 / (math.fsum(diff) / len(diff)))
    assert psnr(a, b) == pytest.approx(want, abs=1e-6)


@pytest.mark.parametrize("c", [0.01, 0.05, 0.2])
def test_psnr_constant_shift(c):
    y = const(0.3)
    assert psnr(y, y + f32(c)) == pytest.approx(-20 * math.log10(c), abs=1e-4)


def test_psnr_peak_and_luma():
    assert psnr(const64(0.5), const64(0.6), peak=2.0) == pytest.approx(20 + 20 * math.log10(2), abs=1e-9)
    # a pure gray shift is the same in luma
    assert psnr(const64(0.5), const64(0.6), luma=True) == pytest.approx(20.0, abs=1e-9)


def test_psnr_rejects_bad_input():
    with pytest.raises(ShapeError):
        psnr(const(0, (1, 3, 4, 4)), const(0, (1, 3, 4, 5)))
    with pytest.raises(ValueError):
        psnr(const(0), const(0), peak=0)


# ------------------------------------------------------------ ssim family

def test_metric_identities():
    x = rand(3, (1, 3, 64, 64))
    assert ssim_metric(x, x) == pytest.approx(1.0, abs=1e-6)
    assert ms_ssim_metric(x, x) == pytest.approx(1.0, abs=1e-6)


def test_metrics_delegate_to_loss_code():
    a, b = rand(4, (1, 3, 48, 48)), rand(5, (1, 3, 48, 48))
    assert ssim_metric(a, b) == losses.ssim(Tensor(a), Tensor(b), losses.FULL_MS_SSIM).item()
    cfg = eval_ms_ssim_config(48, 48)
    assert ms_ssim_metric(a, b) == losses.ms_ssim(Tensor(a), Tensor(b), cfg).item()


@pytest.mark.parametrize("side,scales", [(11, 1), (21, 1), (22, 2), (44, 3), (88, 4), (175, 4), (176, 5), (512, 5)])
def test_eval_scale_fallback(side, scales):
    cfg = eval_ms_ssim_config(side, side + 10)
    assert cfg.scales == scales
    assert math.fsum(cfg.weights) == pytest.approx(1.0, abs=1e-12)


def test_eval_config_rejects_tiny():
    with pytest.raises(ShapeError):
        eval_ms_ssim_config(10, 64)


def test_metrics_decrease_with_noise():
    base = np.linspace(0.1, 0.9, 64 * 64, dtype=f32).reshape(1, 1, 64, 64).repeat(3, axis=1)
    noise = np.random.default_rng(0).standard_normal(base.shape).astype(f32)
    s = [ssim_metric(base, base + e * noise) for e in (0.01, 0.05, 0.2)]
    m = [ms_ssim_metric(base, base + e * noise) for e in (0.01, 0.05, 0.2)]
    p = [psnr(base, base + e * noise) for e in (0.01, 0.05, 0.2)]
    for seq in (s, m, p):
        assert seq[0] > seq[1] > seq[2]


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_metrics_invariant_to_joint_transpose(seed):
    a, b = rand(seed, (1, 3, 48, 40)), rand(seed + 1, (1, 3, 48, 40))
    at, bt = a.transpose(0, 1, 3, 2), b.transpose(0, 1, 3, 2)
    assert psnr(a, b) == pytest.approx(psnr(at, bt), abs=1e-6)
    assert ssim_metric(a, b) == pytest.approx(ssim_metric(at, bt), abs=1e-6)
    assert ms_ssim_metric(a, b) == pytest.approx(ms_ssim_metric(at, bt), abs=1e-6)


# ----------------------------------------------------------------- reports

def test_report_identical_pair():
    x = rand(6)
    rep = evaluate_pairs([("same", lambda: (x, x))])
    assert rep.mean("psnr_db") == math.inf
    assert rep.mean("ssim") == pytest.approx(1.0, abs=1e-6)
    assert rep.to_csv().splitlines()[1].startswith("same,inf,1.0000")


def test_report_mean_of_known_psnrs():
    g = const(0.5)
    items = [("a", lambda: (const(0.6), g)), ("b", lambda: (const(0.51), g))]
    rep = evaluate_pairs(items)
    assert [r.psnr_db for r in rep.rows] == pytest.approx([20.0, 40.0], abs=1e-4)
    assert rep.mean("psnr_db") == pytest.approx(30.0, abs=1e-4)


def test_report_records_failures_and_continues():
    def boom():
        raise OSError("missing.png: no such image")

    x = rand(7)
    rep = evaluate_pairs([("bad", boom), ("good", lambda: (x, x)), ("size", lambda: (x, x[:, :, :16]))])
    assert [r.ok for r in rep.rows] == [False, True, False]
    assert "missing.png" in rep.failures[0].error
    assert len(rep.to_csv().splitlines()) == 2
    assert "(2 failed)" in rep.summary()
    assert "ERROR" in rep.to_text()


def test_csv_format():
    rep = evaluate_pairs([("p", lambda: (const64(0.6), const64(0.5)))])
    header, row = rep.to_csv().splitlines()
    assert header == "image,psnr_db,ssim,ms_ssim"
    fields = row.split(",")
    assert fields[1] == "20.000000"
    assert all(len(f.split(".")[1]) == 6 for f in fields[1:])


def test_manifest_report_is_deterministic(tmp_path):
    for i in range(2):
        write_png(tmp_path / f"p{i}.png", rand(10 + i))
        write_png(tmp_path / f"g{i}.png", rand(20 + i))
    (tmp_path / "pairs.tsv").write_text("# pred\tgt\np0.png\tg0.png\np1.png\tg1.png\n")
    assert len(read_pair_manifest(tmp_path / "pairs.tsv")) == 2
    r1, r2 = evaluate_manifest(tmp_path / "pairs.tsv"), evaluate_manifest(tmp_path / "pairs.tsv")
    assert r1.to_csv() == r2.to_csv() and r1.to_text() == r2.to_text()


def test_empty_report():
    assert math.isnan(Report().mean("psnr_db"))
