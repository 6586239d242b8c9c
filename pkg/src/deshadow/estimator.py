"""Scikit-learn style wrapper around the full pipeline.

``ShadowRemover`` is a transformer-shaped estimator: ``fit`` takes
paired shadow / shadow-free images, ``predict`` (alias ``transform``)
maps new shadow images to restored ones. Hyperparameters mirror the
config keys so grid searches and ``clone`` work as usual.
"""

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin

from .config import Config
from .data import PairedSample
from .evaluate import psnr
from .pipeline import derive_seed, remove_shadow
from .trainer import Trainer
from .validation import ValidationError

__all__ = ["ShadowRemover"]


def _to_chw(arr, name):
    t = torch.as_tensor(np.asarray(arr), dtype=torch.float32)
    if t.dim() != 3:
        raise ValidationError(f"{name}: expected a 3D image, got shape {tuple(t.shape)}")
    channels_last = t.shape[-1] in (1, 3) and t.shape[0] not in (1, 3)
    if channels_last:
        t = t.permute(2, 0, 1)
    return t.contiguous(), channels_last


class ShadowRemover(BaseEstimator, TransformerMixin):
    """Learns mask-free shadow removal from paired images.

    Parameters mirror the pipeline config; see the package README for
    their meaning. Images may be channels-first or channels-last float
    arrays in [0, 1]; predictions come back in the input layout.
    """

    def __init__(
        self,
        base_channels=16,
        depth=3,
        use_agba=True,
        agba_stages="3,2",
        condition_on_priors=True,
        condition_on_content=True,
        timesteps=100,
        schedule="linear",
        sample_steps=25,
        gamma=2.0,
        highfreq_kernel="laplacian3",
        lambda_high=0.1,
        lambda_cssim=0.1,
        lr=1e-4,
        weight_decay=1e-4,
        batch_size=8,
        max_steps=500,
        ema_every=100,
        ema_decay=0.999,
        augment=True,
        seed=0,
    ):
        self.base_channels = base_channels
        self.depth = depth
        self.use_agba = use_agba
        self.agba_stages = agba_stages
        self.condition_on_priors = condition_on_priors
        self.condition_on_content = condition_on_content
        self.timesteps = timesteps
        self.schedule = schedule
        self.sample_steps = sample_steps
        self.gamma = gamma
        self.highfreq_kernel = highfreq_kernel
        self.lambda_high = lambda_high
        self.lambda_cssim = lambda_cssim
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.ema_every = ema_every
        self.ema_decay = ema_decay
        self.augment = augment
        self.seed = seed

    def _config(self):
        return Config(
            {
                "model.base_channels": self.base_channels,
                "model.depth": self.depth,
                "model.use_agba": self.use_agba,
                "model.agba_stages": self.agba_stages,
                "diffusion.condition_on_priors": self.condition_on_priors,
                "diffusion.condition_on_content": self.condition_on_content,
                "diffusion.timesteps": self.timesteps,
                "diffusion.schedule": self.schedule,
                "diffusion.sample_steps": self.sample_steps,
                "diffusion.base_channels": self.base_channels,
                "diffusion.depth": self.depth,
                "priors.gamma": self.gamma,
                "priors.highfreq_kernel": self.highfreq_kernel,
                "loss.lambda_high": self.lambda_high,
                "loss.lambda_cssim": self.lambda_cssim,
                "train.lr": self.lr,
                "train.weight_decay": self.weight_decay,
                "train.batch_size": self.batch_size,
                "train.max_steps": self.max_steps,
                "train.ema_every": self.ema_every,
                "train.ema_decay": self.ema_decay,
                "train.augment": self.augment,
                "train.seed": self.seed,
            }
        )

    def fit(self, X, y):
        """Train on paired images: X shadow inputs, y shadow-free targets."""
        if y is None or len(X) != len(y):
            raise ValidationError("fit needs equally many shadow and shadow-free images")
        samples = []
        for i, (shadow, free) in enumerate(zip(X, y)):
            s, _ = _to_chw(shadow, f"X[{i}]")
            f, _ = _to_chw(free, f"y[{i}]")
            samples.append(PairedSample(shadow=s, shadow_free=f, id=f"sample_{i:05d}"))
        config = self._config()
        trainer = Trainer(config, samples)
        trainer.run()
        from .pipeline import load_eval_models

        restorer, denoiser, sched, _ = load_eval_models(trainer.state_blob())
        self.config_ = config
        self.restorer_ = restorer
        self.denoiser_ = denoiser
        self.schedule_ = sched
        self.n_steps_trained_ = trainer.step
        return self

    def _check_fitted(self):
        if not hasattr(self, "restorer_"):
            raise ValidationError("this ShadowRemover instance is not fitted yet")

    def predict(self, X):
        """Restore each shadow image; returns an array in the input layout."""
        self._check_fitted()
        outputs, layouts = [], []
        for i, item in enumerate(X):
            img, channels_last = _to_chw(item, f"X[{i}]")
            gen = torch.Generator().manual_seed(derive_seed(self.seed, f"predict:{i}"))
            out = remove_shadow(
                img,
                self.restorer_,
                self.denoiser_,
                self.schedule_,
                self.config_,
                gen,
                steps=self.sample_steps,
            )
            outputs.append(out)
            layouts.append(channels_last)
        arrs = [
            (o.permute(1, 2, 0) if cl else o).numpy() for o, cl in zip(outputs, layouts)
        ]
        if len({a.shape for a in arrs}) == 1:
            return np.stack(arrs)
        return arrs

    def transform(self, X):
        return self.predict(X)

    def score(self, X, y):
        """Mean PSNR (dB) of predictions against shadow-free targets."""
        self._check_fitted()
        preds = self.predict(X)
        total = 0.0
        for pred, target in zip(preds, y):
            p, _ = _to_chw(pred, "pred")
            t, _ = _to_chw(target, "target")
            total += psnr(p, t)
        return total / len(y)
