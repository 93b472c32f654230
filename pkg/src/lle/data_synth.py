"""Deterministic synthetic paired data: clean sRGB scenes and simulated short exposures.

A pair is a noisy, dimmed RGGB mosaic (stored as LLR1) plus the clean scene
as a 16-bit PNG. The degradation is ``mosaic(clean) / alpha`` followed by
heteroscedastic Gaussian noise with variance ``shot * base + read**2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .images import read_png, write_png
from .rawproc import BayerFrame, mosaic_rggb, preprocess, read_llr1, write_llr1
from .tensor import DTYPE, Rng, ShapeError, Tensor

MANIFEST_VERSION = 1
MANIFEST_HEADER = f"# lle-manifest {MANIFEST_VERSION}: raw_path<TAB>gt_path<TAB>alpha"

# (read_noise_sigma, shot_noise_scale) in normalized short-exposure units
NOISE_PRESETS = {
    "none": (0.0, 0.0),
    "low": (5e-5, 2.5e-6),
    "default": (1e-4, 1e-5),
    "high": (3e-4, 4e-5),
}

# base exposure time written to LLR1 headers; a power of two keeps alpha exact
EXPOSURE_IN = 1.0 / 16.0


Range = tuple[float, float]


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    height: int = 128
    width: int = 128
    gradient_amp: Range = (0.1, 0.3)
    blob_amp: Range = (0.05, 0.2)
    n_blobs: int = 6
    texture_amp: Range = (0.05, 0.15)
    n_bands: int = 2
    edge_amp: Range = (0.05, 0.15)
    n_edges: int = 3

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0 or self.height % 2 or self.width % 2:
            raise ShapeError(f"scene size must be even and positive, got {self.height}x{self.width}")
        for name in ("gradient_amp", "blob_amp", "texture_amp", "edge_amp"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi, got {(lo, hi)}")

    @classmethod
    def flat(cls, seed: int, height: int, width: int) -> "SceneSpec":
        """All amplitudes zero: a constant 0.5 gray scene."""
        z = (0.0, 0.0)
        return cls(seed, height, width, z, z, 0, z, 0, z, 0)

    @classmethod
    def saturation_stress(cls, seed: int, height: int = 128, width: int = 128) -> "SceneSpec":
        """Large amplitudes so that many pixels clip at 0 or 1."""
        return cls(seed, height, width, (0.6, 0.9), (0.4, 0.8), 8, (0.2, 0.4), 3, (0.3, 0.5), 4)


def generate_scene(spec: SceneSpec) -> Tensor:
    """Clean RGB scene [1,3,H,W] in [0, 1]; bit-identical for a given spec."""
    rng = Rng(spec.seed)
    h, w = spec.height, spec.width
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    img = np.full((3, h, w), 0.5)

    def amp(rng_range, n=3):
        lo, hi = rng_range
        return rng.uniform(lo, hi, size=n) * rng.integers(0, 2, size=n).choose([-1.0, 1.0])

    # smooth illumination gradient
    theta = rng.uniform(0, 2 * math.pi)
    ramp = xx * math.cos(theta) + yy * math.sin(theta)
    span = np.ptp(ramp)
    ramp = (ramp - ramp.min()) / span - 0.5 if span > 0 else np.zeros_like(ramp)
    img += amp(spec.gradient_amp)[:, None, None] * ramp

    side = min(h, w)
    for _ in range(spec.n_blobs):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sigma = rng.uniform(0.05, 0.2) * side
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        img += amp(spec.blob_amp)[:, None, None] * g

    # high-frequency stripes confined to a band, so smoothing is measurable
    for _ in range(spec.n_bands):
        vertical = bool(rng.integers(0, 2))
        coord, along = (xx, yy) if vertical else (yy, xx)
        extent = w if vertical else h
        width_band = max(4.0, extent / 5)
        start = rng.uniform(0, max(extent - width_band, 1))
        mask = ((coord >= start) & (coord < start + width_band)).astype(np.float64)
        period = rng.uniform(2.5, 6.0)
        phase = rng.uniform(0, 2 * math.pi)
        stripes = np.sin(2 * math.pi * along / period + phase)
        img += amp(spec.texture_amp)[:, None, None] * (mask * stripes)

    for _ in range(spec.n_edges):
        phi = rng.uniform(0, 2 * math.pi)
        oy, ox = rng.uniform(0, h), rng.uniform(0, w)
        side_of = ((yy - oy) * math.cos(phi) - (xx - ox) * math.sin(phi) > 0).astype(np.float64)
        img += amp(spec.edge_amp)[:, None, None] * side_of

    return Tensor(np.clip(img, 0.0, 1.0).astype(DTYPE)[None])


@dataclass(frozen=True)
class DegradeSpec:
    alpha: float
    read_noise_sigma: float = NOISE_PRESETS["default"][0]
    shot_noise_scale: float = NOISE_PRESETS["default"][1]
    seed: int = 0

    def __post_init__(self):
        # alpha is stored as float32 in LLR1 headers; keep it representable
        object.__setattr__(self, "alpha", float(np.float32(self.alpha)))
        if not self.alpha > 1:
            raise ValueError(f"alpha must be > 1, got {self.alpha}")
        if self.read_noise_sigma < 0 or self.shot_noise_scale < 0:
            raise ValueError("noise parameters must be non-negative")

    @classmethod
    def sample(cls, seed: int, alpha_range: Range = (100.0, 300.0), noise: str = "default") -> "DegradeSpec":
        if noise not in NOISE_PRESETS:
            raise ValueError(f"unknown noise preset {noise!r}; choose from {sorted(NOISE_PRESETS)}")
        lo, hi = alpha_range
        if not 1 < lo <= hi:
            raise ValueError(f"alpha range must satisfy 1 < lo <= hi, got {alpha_range}")
        alpha = Rng(seed, 1).uniform(lo, hi) if hi > lo else lo
        read, shot = NOISE_PRESETS[noise]
        return cls(alpha, read, shot, seed)


def degrade_lowlight(clean_rgb, spec: DegradeSpec) -> BayerFrame:
    """Short-exposure simulation of a clean scene."""
    base = mosaic_rggb(clean_rgb).data / DTYPE(spec.alpha)
    if spec.read_noise_sigma == 0 and spec.shot_noise_scale == 0:
        return BayerFrame(base)
    std = np.sqrt(DTYPE(spec.shot_noise_scale) * base + DTYPE(spec.read_noise_sigma) ** 2)
    noisy = base + Rng(spec.seed, 2).normal(base.shape) * std
    return BayerFrame(np.clip(noisy, 0.0, 1.0))


# ------------------------------------------------------------------ pairs

@dataclass(frozen=True)
class PairRecord:
    raw_path: Path
    gt_path: Path
    alpha: float


@dataclass
class Pair:
    """A loaded training pair: raw frame, its exposure ratio, and the target."""

    name: str
    frame: BayerFrame
    alpha: float
    gt: np.ndarray
    _packed: np.ndarray | None = None

    def __post_init__(self):
        if self.gt.shape != (1, 3, self.frame.height, self.frame.width):
            raise ShapeError(
                f"{self.name}: raw frame {self.frame.height}x{self.frame.width} does not match target {self.gt.shape}"
            )

    @property
    def packed(self) -> np.ndarray:
        """Packed, amplified, clipped input for the whole frame."""
        if self._packed is None:
            self._packed = preprocess(self.frame, self.alpha).data
        return self._packed


def make_pair(scene: SceneSpec, degrade: DegradeSpec, out_dir, stem: str = "pair") -> PairRecord:
    out_dir = Path(out_dir)
    clean = generate_scene(scene)
    raw = degrade_lowlight(clean, degrade)
    raw_path, gt_path = out_dir / f"{stem}_raw.llr1", out_dir / f"{stem}_gt.png"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_llr1(raw_path, raw, EXPOSURE_IN, degrade.alpha * EXPOSURE_IN)
        write_png(gt_path, clean.data, bits=16)
    except OSError as exc:
        raise OSError(f"{out_dir}: failed to write pair {stem!r}: {exc}") from exc
    return PairRecord(raw_path, gt_path, degrade.alpha)


def load_pair(record: PairRecord) -> Pair:
    raw = read_llr1(record.raw_path)
    if not record.alpha > 0:
        raise ValueError(f"{record.raw_path}: alpha must be > 0, got {record.alpha}")
    return Pair(Path(record.raw_path).stem, raw.frame, float(record.alpha), read_png(record.gt_path))


def write_manifest(path, records) -> None:
    path = Path(path)
    base = path.parent.resolve()
    lines = [MANIFEST_HEADER]
    for r in records:
        paths = []
        for p in (r.raw_path, r.gt_path):
            p = Path(p).resolve()
            paths.append(str(p.relative_to(base)) if p.is_relative_to(base) else str(p))
        lines.append(f"{paths[0]}\t{paths[1]}\t{r.alpha!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path, check_files: bool = True) -> list[PairRecord]:
    """Parse a manifest; relative paths resolve against the manifest's directory."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    base = path.parent
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected raw<TAB>gt<TAB>alpha, got {len(parts)} field(s)")
        try:
            alpha = float(parts[2])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: alpha {parts[2]!r} is not a number") from None
        if not alpha > 0:
            raise ValueError(f"{path}:{lineno}: alpha must be > 0, got {alpha}")
        rec = PairRecord(base / parts[0], base / parts[1], alpha)
        if check_files:
            for p in (rec.raw_path, rec.gt_path):
                if not p.is_file():
                    raise FileNotFoundError(f"{path}:{lineno}: missing file {p}")
        out.append(rec)
    return out


def sample_patch(pair: Pair, patch: int, rng: Rng, multiple: int = 2) -> tuple[Tensor, Tensor]:
    """Random aligned crop: x [1,4,p/2,p/2] (packed, amplified) and y [1,3,p,p].

    The window's top-left corner is always at even coordinates so the
    Bayer phase is preserved. ``multiple`` is the divisibility the model needs.
    """
    if patch <= 0 or patch % 2 or patch % multiple:
        raise ShapeError(f"patch must be positive and divisible by {max(2, multiple)}, got {patch}")
    h, w = pair.frame.height, pair.frame.width
    if patch > h or patch > w:
        raise ShapeError(f"patch {patch} does not fit in {h}x{w} frame {pair.name!r}")
    top = 2 * int(rng.integers(0, (h - patch) // 2 + 1))
    left = 2 * int(rng.integers(0, (w - patch) // 2 + 1))
    half = patch // 2
    x = pair.packed[:, :, top // 2 : top // 2 + half, left // 2 : left // 2 + half]
    y = pair.gt[:, :, top : top + patch, left : left + patch]
    return Tensor(np.ascontiguousarray(x)), Tensor(np.ascontiguousarray(y))


def pair_seeds(seed: int, index: int) -> tuple[int, int]:
    """Independent (scene, degradation) seeds for pair ``index`` of a dataset."""
    s = np.random.SeedSequence([seed, index]).generate_state(2, dtype=np.uint64)
    return int(s[0]), int(s[1])


def synthesize_dataset(
    out_dir,
    pairs: int,
    height: int,
    width: int,
    seed: int = 0,
    alpha_range: Range = (100.0, 300.0),
    noise: str = "default",
) -> tuple[Path, list[PairRecord]]:
    """Write ``pairs`` pairs plus ``manifest.tsv`` under ``out_dir``."""
    if pairs < 0:
        raise ValueError(f"pairs must be >= 0, got {pairs}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(pairs):
        s_scene, s_noise = pair_seeds(seed, i)
        scene = SceneSpec(s_scene, height, width)
        degrade = DegradeSpec.sample(s_noise, alpha_range, noise)
        records.append(make_pair(scene, degrade, out_dir, stem=f"pair_{i:04d}"))
    manifest = out_dir / "manifest.tsv"
    write_manifest(manifest, records)
    return manifest, records
