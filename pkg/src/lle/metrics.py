"""Full-reference quality metrics (PSNR, SSIM, MS-SSIM) and batch reports.

SSIM and MS-SSIM reuse the loss implementations so that training and
evaluation can never disagree. PSNR of identical images is ``math.inf``,
written as ``inf`` in reports.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import losses
from .images import read_png
from .tensor import ShapeError, Tensor, tick

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
CSV_HEADER = ("image", "psnr_db", "ssim", "ms_ssim")


def _array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def psnr(y, y_hat, peak: float = 1.0, luma: bool = False) -> float:
    """10 log10(peak^2 / MSE) over all channels jointly, or over BT.601 luma."""
    a, b = _array(y).astype(np.float64), _array(y_hat).astype(np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError(f"psnr: peak must be positive, got {peak}")
    tick("metric")
    if luma:
        if a.ndim != 4 or a.shape[1] != 3:
            raise ShapeError(f"psnr(luma=True) needs [N,3,H,W], got {a.shape}")
        w = np.asarray(LUMA_WEIGHTS)[None, :, None, None]
        a, b = (a * w).sum(axis=1), (b * w).sum(axis=1)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def eval_ms_ssim_config(height: int, width: int) -> losses.MsSsimConfig:
    """Five scales when the image allows it, else the most that fit.

    Weights are the leading five-scale exponents, renormalized to sum to 1.
    """
    side = min(height, width)
    window = losses.FULL_MS_SSIM.window
    if side < window:
        raise ShapeError(f"ms_ssim: images {height}x{width} are smaller than the {window}-pixel window")
    scales = 1
    while scales < len(losses.MS_SSIM_WEIGHTS_5) and side >= window * 2**scales:
        scales += 1
    return losses.FULL_MS_SSIM if scales == 5 else losses.MsSsimConfig(scales=scales)


def ssim_metric(y, y_hat) -> float:
    tick("metric")
    return losses.ssim(Tensor(_array(y)), Tensor(_array(y_hat)), losses.FULL_MS_SSIM).item()


def ms_ssim_metric(y, y_hat) -> float:
    a, b = _array(y), _array(y_hat)
    if a.ndim != 4:
        raise ShapeError(f"ms_ssim: expected [N,C,H,W], got {a.shape}")
    tick("metric")
    return losses.ms_ssim(Tensor(a), Tensor(b), eval_ms_ssim_config(*a.shape[2:])).item()


# ------------------------------------------------------------------ reports

def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6f}"


@dataclass
class PairScore:
    image: str
    psnr_db: float = math.nan
    ssim: float = math.nan
    ms_ssim: float = math.nan
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class Report:
    rows: list[PairScore] = field(default_factory=list)

    @property
    def scored(self) -> list[PairScore]:
        return [r for r in self.rows if r.ok]

    @property
    def failures(self) -> list[PairScore]:
        return [r for r in self.rows if not r.ok]

    def mean(self, key: str) -> float:
        vals = [getattr(r, key) for r in self.scored]
        if not vals:
            return math.nan
        if any(math.isinf(v) for v in vals):
            return math.inf
        return math.fsum(vals) / len(vals)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.scored:
            w.writerow([r.image, _fmt(r.psnr_db), _fmt(r.ssim), _fmt(r.ms_ssim)])
        return buf.getvalue()

    def summary(self) -> str:
        n, bad = len(self.scored), len(self.failures)
        line = (
            f"mean over {n} image(s): psnr_db={_fmt(self.mean('psnr_db'))} "
            f"ssim={_fmt(self.mean('ssim'))} ms_ssim={_fmt(self.mean('ms_ssim'))}"
        )
        return line + (f" ({bad} failed)" if bad else "")

    def to_text(self) -> str:
        name_w = max([len("image")] + [len(r.image) for r in self.rows])
        lines = [f"{'image':<{name_w}}  {'psnr_db':>12}  {'ssim':>10}  {'ms_ssim':>10}"]
        for r in self.rows:
            if r.ok:
                lines.append(f"{r.image:<{name_w}}  {_fmt(r.psnr_db):>12}  {_fmt(r.ssim):>10}  {_fmt(r.ms_ssim):>10}")
            else:
                lines.append(f"{r.image:<{name_w}}  ERROR: {r.error}")
        lines.append(self.summary())
        return "\n".join(lines) + "\n"


def score_pair(name: str, pred, gt) -> PairScore:
    a, b = _array(gt), _array(pred)
    if a.shape != b.shape:
        raise ShapeError(f"prediction {b.shape} and ground truth {a.shape} differ in size")
    return PairScore(name, psnr(a, b), ssim_metric(a, b), ms_ssim_metric(a, b))


def evaluate_pairs(items: Iterable[tuple[str, Callable[[], tuple[np.ndarray, np.ndarray]]]]) -> Report:
    """Score ``(name, load)`` items where ``load()`` returns ``(pred, gt)``.

    A failing pair is recorded with its error and the run continues.
    """
    report = Report()
    for name, load in items:
        try:
            pred, gt = load()
            report.rows.append(score_pair(name, pred, gt))
        except (OSError, ValueError) as exc:
            report.rows.append(PairScore(name, error=str(exc)))
    return report


def read_pair_manifest(path) -> list[tuple[Path, Path]]:
    """``pred_path<TAB>gt_path`` lines; ``#`` starts a comment; paths relative to the manifest."""
    path = Path(path)
    base = path.parent
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'pred<TAB>gt', got {len(parts)} field(s)")
        pairs.append((base / parts[0], base / parts[1]))
    return pairs


def evaluate_manifest(path) -> Report:
    items = []
    for pred, gt in read_pair_manifest(path):
        items.append((pred.name, lambda p=pred, g=gt: (read_png(p), read_png(g))))
    return evaluate_pairs(items)
