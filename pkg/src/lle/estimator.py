"""scikit-learn style wrappers around packing and the enhancement model.

Images follow the usual channel-last convention at this boundary: raw
frames are ``[n, H, W]`` and RGB images are ``[n, H, W, 3]``.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import save_checkpoint
from .data_synth import Pair
from .inference import enhance_frame
from .metrics import psnr
from .rawproc import BayerFrame, preprocess
from .trainer import ABLATIONS, TrainConfig, Trainer
from .validation import check_alpha, check_bayer_batch, check_rgb_batch


class BayerPacker(TransformerMixin, BaseEstimator):
    """RGGB frames [n, H, W] -> packed, amplified, clipped [n, 4, H/2, W/2]."""

    def __init__(self, alpha=None, clip_max: float = 1.0):
        self.alpha = alpha
        self.clip_max = clip_max

    def fit(self, X, y=None):
        X = check_bayer_batch(X)
        self.frame_shape_ = X.shape[1:]
        return self

    def transform(self, X, alpha=None):
        check_is_fitted(self, "frame_shape_")
        X = check_bayer_batch(X)
        a = check_alpha(self.alpha if alpha is None else alpha, len(X))
        return np.concatenate([preprocess(f, float(ai), clip_max=self.clip_max).data for f, ai in zip(X, a)])


class LowLightEnhancer(BaseEstimator):
    """Trains the generator (and discriminator, for ``ablation='full'``) on raw/RGB pairs.

    ``score`` is the mean PSNR in dB over the given frames.
    """

    def __init__(
        self,
        ablation: str = "full",
        steps: int = 2000,
        patch: int = 80,
        batch: int = 2,
        lr: float = 1e-3,
        levels: int = 4,
        base_channels: int = 16,
        d_base_channels: int = 16,
        random_state: int = 0,
    ):
        self.ablation = ablation
        self.steps = steps
        self.patch = patch
        self.batch = batch
        self.lr = lr
        self.levels = levels
        self.base_channels = base_channels
        self.d_base_channels = d_base_channels
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; choose from {', '.join(ABLATIONS)}")
        return TrainConfig(
            seed=int(self.random_state),
            steps=int(self.steps),
            patch=int(self.patch),
            batch=int(self.batch),
            lr=float(self.lr),
            levels=int(self.levels),
            base_channels=int(self.base_channels),
            d_base_channels=int(self.d_base_channels),
            **ABLATIONS[self.ablation],
        )

    def fit(self, X, y, alpha=None):
        X = check_bayer_batch(X)
        n, h, w = X.shape
        Y = check_rgb_batch(y, n, h, w)
        a = check_alpha(alpha, n)
        config = self._config()
        pairs = [Pair(f"frame{i}", BayerFrame(X[i]), float(a[i]), Y[i : i + 1]) for i in range(n)]
        trainer = Trainer(config, pairs)
        history = []
        while trainer.step < trainer.total_steps:
            history.append(trainer.train_one())
        self.config_ = config
        self.trainer_ = trainer
        self.generator_ = trainer.G
        self.history_ = history
        self.n_iter_ = trainer.step
        return self

    def predict(self, X, alpha=None):
        check_is_fitted(self, "generator_")
        X = check_bayer_batch(X)
        a = check_alpha(alpha, len(X))
        out = [enhance_frame(self.generator_, BayerFrame(f), float(ai))[0] for f, ai in zip(X, a)]
        return np.concatenate(out).transpose(0, 2, 3, 1)

    def score(self, X, y, alpha=None) -> float:
        pred = self.predict(X, alpha)
        vals = [psnr(t, p) for t, p in zip(np.asarray(y, np.float32), pred)]
        return math.inf if any(math.isinf(v) for v in vals) else math.fsum(vals) / len(vals)

    def save(self, path):
        check_is_fitted(self, "trainer_")
        return save_checkpoint(path, self.trainer_.to_checkpoint())
