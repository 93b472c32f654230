"""Alternating conditional-GAN training with ablation switches and checkpoints.

One step with the GAN enabled:

1. the generator runs once on its own tape;
2. the discriminator takes one Adam step on real vs. the detached fake;
3. the generator takes one Adam step on ``adv + lambda_total * rec``,
   judged by the freshly updated discriminator.

Patches for step ``k`` depend only on ``(seed, k)``, so a resumed run draws
exactly the batches an uninterrupted run would.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data_synth import Pair, load_pair, read_manifest, sample_patch
from .discriminator import (
    DiscriminatorConfig,
    DiscriminatorParams,
    build_discriminator,
    conditional_input,
    discriminator_forward,
    receptive_field,
)
from .generator import GeneratorConfig, GeneratorParams, build_generator, generator_forward
from .losses import (
    LossWeights,
    MsSsimConfig,
    adv_loss_discriminator,
    adv_loss_generator,
    reconstruction_loss,
    total_generator_objective,
)
from .optim import AdamState, adam_step
from .params import ParamSet
from .tensor import NonFiniteError, Rng, ShapeError, Tape, Tensor, backward

log = logging.getLogger(__name__)

# Rng substream keys
_STREAM_G, _STREAM_D, _STREAM_ORDER, _STREAM_PATCH = 10, 11, 20, 21

METRICS_HEADER = "step,loss_d,loss_g_adv,loss_rec"


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 1
    steps: int = 0
    patch: int = 80
    batch: int = 2
    lr: float = 1e-3
    lr_d: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    d_steps: int = 1
    lambda_1: float = 0.16
    lambda_ms: float = 0.84
    lambda_total: float = 100.0
    use_attention: bool = True
    use_ms_ssim: bool = True
    use_gan: bool = True
    levels: int = 4
    base_channels: int = 16
    d_base_channels: int = 16
    ms_ssim_scales: int = 3
    clip_max: float = 1.0
    checkpoint_every: int = 0

    def __post_init__(self):
        self.validate()

    # ----------------------------------------------------------- derived
    @property
    def generator(self) -> GeneratorConfig:
        return GeneratorConfig(self.levels, self.base_channels, use_attention=self.use_attention)

    @property
    def discriminator(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(self.d_base_channels)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_1, self.lambda_ms if self.use_ms_ssim else 0.0, self.lambda_total)

    @property
    def ms_ssim(self) -> MsSsimConfig:
        return MsSsimConfig(scales=self.ms_ssim_scales)

    @property
    def patch_multiple(self) -> int:
        return 2 * self.generator.stride_requirement

    def validate(self) -> None:
        def bad(field_name, msg):
            raise ConfigError(f"field '{field_name}': {msg}")

        for name in ("epochs", "steps", "checkpoint_every"):
            if getattr(self, name) < 0:
                bad(name, "must be >= 0")
        for name in ("batch", "d_steps"):
            if getattr(self, name) < 1:
                bad(name, "must be >= 1")
        if self.lr < 0 or (self.lr_d is not None and self.lr_d < 0):
            bad("lr", "learning rates must be >= 0")
        if not 0 < self.clip_max:
            bad("clip_max", "must be > 0")
        try:
            self.generator
            self.discriminator
            self.loss_weights
            self.ms_ssim
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.patch <= 0 or self.patch % self.patch_multiple:
            bad("patch", f"must be a positive multiple of {self.patch_multiple} for levels={self.levels}")
        if self.use_gan and self.patch < receptive_field():
            bad("patch", f"{self.patch} is smaller than the discriminator's {receptive_field()}-pixel receptive field")
        if self.use_ms_ssim and self.patch < self.ms_ssim.min_size:
            bad("patch", f"{self.patch} is too small for {self.ms_ssim_scales}-scale MS-SSIM (need {self.ms_ssim.min_size})")

    # ----------------------------------------------------------- text form
    def to_text(self) -> str:
        lines = ["# lle train config"]
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "TrainConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values: dict = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {body!r}")
            key, raw = (s.strip() for s in body.split("=", 1))
            if key not in fields:
                raise ConfigError(f"{source}:{lineno}: unknown field '{key}'")
            if key in values:
                raise ConfigError(f"{source}:{lineno}: field '{key}' given twice")
            try:
                values[key] = _parse_value(raw, fields[key].type)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: field '{key}': {exc}") from None
        try:
            return cls(**values)
        except ConfigError as exc:
            raise ConfigError(f"{source}: {exc}") from None

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        path = Path(path)
        return cls.from_text(path.read_text(encoding="utf-8"), str(path))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v)


def _parse_value(raw: str, typ):
    typ = str(typ)
    low = raw.lower()
    if "None" in typ and low == "none":
        return None
    if typ.startswith("bool"):
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected true/false, got {raw!r}")
    if typ.startswith("int"):
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"expected an integer, got {raw!r}") from None
    if typ.startswith("float"):
        try:
            v = float(raw)
        except ValueError:
            raise ValueError(f"expected a number, got {raw!r}") from None
        if not math.isfinite(v):
            raise ValueError(f"expected a finite number, got {raw!r}")
        return v
    raise ValueError(f"unsupported field type {typ}")


# Cumulative rows: baseline U-Net with L1 only, then attention, MS-SSIM, GAN.
ABLATIONS = {
    "baseline": dict(use_attention=False, use_ms_ssim=False, use_gan=False),
    "attn": dict(use_attention=True, use_ms_ssim=False, use_gan=False),
    "msssim": dict(use_attention=True, use_ms_ssim=True, use_gan=False),
    "full": dict(use_attention=True, use_ms_ssim=True, use_gan=True),
}


def apply_ablation(config: TrainConfig, name: str) -> TrainConfig:
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
    return config.replace(**ABLATIONS[name])


# ---------------------------------------------------------------- stepping

class _frozen:
    """Temporarily stop gradients into a ParamSet (used for D during the G phase)."""

    def __init__(self, params: ParamSet | None):
        self.params = params

    def __enter__(self):
        if self.params is not None:
            for t in self.params.tensors():
                t.requires_grad = False

    def __exit__(self, *exc):
        if self.params is not None:
            for t in self.params.tensors():
                t.requires_grad = True


def _finite(value: float, what: str, step: int | None) -> float:
    if not math.isfinite(value):
        at = "" if step is None else f" at step {step}"
        raise TrainingDiverged(f"non-finite {what}{at}")
    return value


def train_step(
    batch: tuple[Tensor, Tensor],
    G: GeneratorParams,
    D: DiscriminatorParams | None,
    opt_g: AdamState,
    opt_d: AdamState | None,
    config: TrainConfig,
    step: int | None = None,
) -> dict[str, float]:
    """One optimisation step; returns ``{loss_d, loss_g_adv, loss_rec}``."""
    x, y = batch
    weights, ms_cfg = config.loss_weights, config.ms_ssim
    use_gan = config.use_gan
    if use_gan and (D is None or opt_d is None):
        raise ValueError("use_gan is on but no discriminator was given")

    g_tape = Tape()
    with g_tape:
        y_hat, _ = generator_forward(G, x)
        rec = reconstruction_loss(y, y_hat, weights, ms_cfg)
    loss_rec = _finite(rec.item(), "reconstruction loss", step)

    loss_d = 0.0
    if use_gan:
        real_in = conditional_input(x, y)
        fake_in = conditional_input(x, y_hat.detach())
        for _ in range(config.d_steps):
            with Tape():
                d_loss = adv_loss_discriminator(discriminator_forward(D, real_in), discriminator_forward(D, fake_in))
            loss_d = _finite(d_loss.item(), "discriminator loss", step)
            backward(d_loss)
            adam_step(D, opt_d)
            D.zero_grad()

    loss_adv = 0.0
    with g_tape, _frozen(D):
        if use_gan:
            adv = adv_loss_generator(discriminator_forward(D, conditional_input(x, y_hat)))
            loss_adv = _finite(adv.item(), "generator adversarial loss", step)
            total = total_generator_objective(adv, rec, weights)
        else:
            total = total_generator_objective(Tensor(np.zeros((), np.float32)), rec, weights)
    with _frozen(D):
        # D must stay frozen through backward too, or its .grad picks up the G objective
        backward(total)
    adam_step(G, opt_g)
    G.zero_grad()
    return {"loss_d": loss_d, "loss_g_adv": loss_adv, "loss_rec": loss_rec}


# ---------------------------------------------------------------- trainer

class Trainer:
    """Owns models, optimisers and the step counter for one training run."""

    def __init__(self, config: TrainConfig, pairs: list[Pair]):
        if not pairs:
            raise ValueError("training needs at least one pair")
        self.config = config
        self.pairs = pairs
        self.G = build_generator(config.generator, Rng(config.seed, _STREAM_G))
        self.D = build_discriminator(config.discriminator, Rng(config.seed, _STREAM_D)) if config.use_gan else None
        hyper = dict(beta1=config.beta1, beta2=config.beta2, eps=config.eps)
        self.opt_g = AdamState.for_params(self.G, lr=config.lr, **hyper)
        self.opt_d = None
        if self.D is not None:
            lr_d = config.lr if config.lr_d is None else config.lr_d
            self.opt_d = AdamState.for_params(self.D, lr=lr_d, **hyper)
        self.step = 0
        self._orders: dict[int, np.ndarray] = {}

    @property
    def steps_per_epoch(self) -> int:
        return -(-len(self.pairs) // self.config.batch)

    @property
    def total_steps(self) -> int:
        c = self.config
        return c.steps if c.steps > 0 else c.epochs * self.steps_per_epoch

    def _pair_index(self, k: int) -> int:
        n = len(self.pairs)
        epoch, pos = divmod(k, n)
        order = self._orders.get(epoch)
        if order is None:
            order = self._orders[epoch] = Rng(self.config.seed, _STREAM_ORDER, epoch).permutation(n)
            if len(self._orders) > 4:
                self._orders.pop(min(self._orders))
        return int(order[pos])

    def patch_rng(self, step: int) -> Rng:
        return Rng(self.config.seed, _STREAM_PATCH, step)

    def batch_for(self, step: int) -> tuple[Tensor, Tensor]:
        """Batch for a global step: pair order is a per-epoch permutation, one patch per pair visit."""
        c = self.config
        rng = self.patch_rng(step)
        xs, ys = [], []
        for j in range(c.batch):
            pair = self.pairs[self._pair_index(step * c.batch + j)]
            x, y = sample_patch(pair, c.patch, rng, c.patch_multiple)
            xs.append(x.data)
            ys.append(y.data)
        return Tensor(np.concatenate(xs)), Tensor(np.concatenate(ys))

    def train_one(self) -> dict[str, float]:
        metrics = train_step(
            self.batch_for(self.step), self.G, self.D, self.opt_g, self.opt_d, self.config, self.step + 1
        )
        self.step += 1
        return metrics

    # ------------------------------------------------------ checkpoints
    def to_checkpoint(self) -> Checkpoint:
        tensors: OrderedDict[str, np.ndarray] = OrderedDict()
        for prefix, params, opt in (("G", self.G, self.opt_g), ("D", self.D, self.opt_d)):
            if params is None:
                continue
            for name, t in params.items():
                tensors[f"{prefix}/{name}"] = t.data
            for name in params:
                tensors[f"{prefix}.adam.m/{name}"] = opt.m[name]
            for name in params:
                tensors[f"{prefix}.adam.v/{name}"] = opt.v[name]
        state = {
            "step": self.step,
            "adam_g": self.opt_g.hyper(),
            "adam_d": None if self.opt_d is None else self.opt_d.hyper(),
            "patch_rng": self.patch_rng(self.step).state,
        }
        return Checkpoint(self.config.to_text(), tensors, state)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, pairs: list[Pair], config: TrainConfig | None = None) -> "Trainer":
        saved = TrainConfig.from_text(ckpt.config_text, "checkpoint config")
        if config is None:
            config = saved
        else:
            check_resume_compatible(saved, config)
        tr = cls(config, pairs)
        for prefix, params, opt in (("G", tr.G, tr.opt_g), ("D", tr.D, tr.opt_d)):
            if params is None:
                continue
            params.load(_strip(ckpt.tensors, f"{prefix}/"))
            for slot in ("m", "v"):
                arrs = _strip(ckpt.tensors, f"{prefix}.adam.{slot}/")
                if set(arrs) != set(params):
                    raise ValueError(f"checkpoint optimiser moments {prefix}.{slot} do not match the model")
                getattr(opt, slot).update({k: arrs[k].copy() for k in params})
            hyper = ckpt.state["adam_g" if prefix == "G" else "adam_d"]
            opt.t = int(hyper["t"])
        tr.step = int(ckpt.state["step"])
        return tr


def _strip(tensors, prefix: str) -> dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}


# fields that may differ when resuming (they only change how long to run)
RESUME_MUTABLE = ("epochs", "steps", "checkpoint_every")


def check_resume_compatible(saved: TrainConfig, config: TrainConfig) -> None:
    diffs = [
        f.name
        for f in dataclasses.fields(TrainConfig)
        if f.name not in RESUME_MUTABLE and getattr(saved, f.name) != getattr(config, f.name)
    ]
    if diffs:
        raise ConfigError(f"config differs from the checkpoint in: {', '.join(diffs)}")


# ---------------------------------------------------------------- loop

@dataclass
class TrainResult:
    checkpoint: Path
    metrics: Path
    steps: int
    skipped: list[str]


def load_pairs(records, patch: int | None = None) -> tuple[list[Pair], list[str]]:
    """Load what can be loaded; unreadable or too-small pairs are skipped with a warning."""
    pairs, skipped = [], []
    for rec in records:
        try:
            pair = load_pair(rec)
            if patch is not None and (patch > pair.frame.height or patch > pair.frame.width):
                raise ShapeError(f"{pair.frame.height}x{pair.frame.width} frame is smaller than patch {patch}")
        except (OSError, ValueError) as exc:
            log.warning("skipping pair %s: %s", rec.raw_path, exc)
            skipped.append(f"{rec.raw_path}: {exc}")
            continue
        pairs.append(pair)
    return pairs, skipped


def _format_metrics(step: int, m: dict[str, float]) -> str:
    return f"{step},{m['loss_d']:.9g},{m['loss_g_adv']:.9g},{m['loss_rec']:.9g}"


def _prepare_metrics_log(path: Path, keep_through: int) -> None:
    """Start a fresh log, or on resume keep only rows up to the checkpoint step."""
    rows = []
    if keep_through > 0 and path.exists():
        for line in path.read_text(encoding="utf-8").splitlines()[1:]:
            if line and int(line.split(",", 1)[0]) <= keep_through:
                rows.append(line)
    path.write_text("\n".join([METRICS_HEADER, *rows]) + "\n", encoding="utf-8")


def checkpoint_name(step: int) -> str:
    return f"ckpt_{step:06d}.llck"


def run_training(trainer: Trainer, out_dir, progress=None) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    _prepare_metrics_log(metrics_path, trainer.step)
    every = trainer.config.checkpoint_every
    last_good: Path | None = None
    if trainer.step == 0:
        last_good = save_checkpoint(out_dir / checkpoint_name(0), trainer.to_checkpoint())
    with metrics_path.open("a", encoding="utf-8") as log_file:
        while trainer.step < trainer.total_steps:
            try:
                m = trainer.train_one()
            except (TrainingDiverged, NonFiniteError) as exc:
                pointer = str(last_good) if last_good else "none written yet"
                raise TrainingDiverged(f"{exc}; last good checkpoint: {pointer}") from exc
            log_file.write(_format_metrics(trainer.step, m) + "\n")
            if every and trainer.step % every == 0:
                log_file.flush()
                last_good = save_checkpoint(out_dir / checkpoint_name(trainer.step), trainer.to_checkpoint())
            if progress is not None:
                progress(trainer.step, m)
    final = save_checkpoint(out_dir / "final.llck", trainer.to_checkpoint())
    return TrainResult(final, metrics_path, trainer.step, [])


def train_loop(manifest, config: TrainConfig, out_dir, resume=None, progress=None) -> TrainResult:
    """Train from a data manifest; writes checkpoints and ``metrics.csv`` into ``out_dir``."""
    records = read_manifest(manifest, check_files=False)
    if not records:
        raise ValueError(f"{manifest}: manifest lists no pairs")
    pairs, skipped = load_pairs(records, config.patch)
    if not pairs:
        raise RuntimeError(f"{manifest}: none of the {len(records)} pairs could be loaded")
    if resume is not None:
        trainer = Trainer.from_checkpoint(load_checkpoint(resume), pairs, config)
    else:
        trainer = Trainer(config, pairs)
    result = run_training(trainer, out_dir, progress)
    result.skipped = skipped
    return result


def load_generator(path) -> GeneratorParams:
    """Generator weights from a checkpoint, for inference."""
    ckpt = load_checkpoint(path)
    config = TrainConfig.from_text(ckpt.config_text, f"{path} config")
    G = build_generator(config.generator, Rng(0))
    G.load(_strip(ckpt.tensors, "G/"))
    return G
