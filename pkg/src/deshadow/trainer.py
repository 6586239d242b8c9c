"""Joint optimization of both branches.

One decoupled-weight-decay Adam stream over the content restorer and
the detail denoiser together, gradient-clipped, with periodic EMA
shadow weights used at inference. All randomness (batch choice,
augmentation, timesteps, noise) flows through one explicit generator
whose state lives in the checkpoint, so a resumed run replays the
uninterrupted metrics stream exactly.
"""

import os
import time
from dataclasses import dataclass

import torch

from .config import Config
from .data import augment
from .diffusion import ConditionBundle, q_sample
from .losses import LossWeights, loss_cssim, loss_dm, loss_high, total_loss
from .pipeline import build_models, derive_seed
from .priors import contrast_heatmap_batch, highfreq_batch
from .restorer import content_loss
from .validation import ValidationError

__all__ = ["StepMetrics", "Trainer", "load_checkpoint", "read_metrics"]

METRICS_HEADER = "step\tL_content\tL_DM\tL_high\tL_cssim\tL_total\twall_ms"


@dataclass
class StepMetrics:
    step: int
    loss_content: float
    loss_dm: float
    loss_high: float
    loss_cssim: float
    loss_total: float
    wall_ms: float

    def row(self):
        vals = [
            repr(self.loss_content),
            repr(self.loss_dm),
            repr(self.loss_high),
            repr(self.loss_cssim),
            repr(self.loss_total),
        ]
        return f"{self.step}\t" + "\t".join(vals) + f"\t{self.wall_ms:.1f}"


def read_metrics(path):
    """Parse a metrics TSV back into a list of StepMetrics."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("step\t"):
                continue
            parts = line.split("\t")
            out.append(
                StepMetrics(
                    step=int(parts[0]),
                    loss_content=float(parts[1]),
                    loss_dm=float(parts[2]),
                    loss_high=float(parts[3]),
                    loss_cssim=float(parts[4]),
                    loss_total=float(parts[5]),
                    wall_ms=float(parts[6]),
                )
            )
    return out


def load_checkpoint(path):
    """Read a checkpoint blob from disk (CPU tensors)."""
    return torch.load(path, map_location="cpu", weights_only=True)


class Trainer:
    """Stateful training loop over an in-memory list of PairedSample."""

    def __init__(self, config, samples):
        if not samples:
            raise ValidationError("training requires at least one paired sample")
        shapes = {tuple(s.shadow.shape) for s in samples}
        if len(shapes) != 1:
            raise ValidationError(f"samples have mixed shapes: {sorted(shapes)}")
        self.config = config
        self.samples = list(samples)

        seed = config["train.seed"]
        torch.manual_seed(derive_seed(seed, "init"))
        self.restorer, self.denoiser, self.sched = build_models(config)
        self.restorer.check_size(samples[0].shadow.unsqueeze(0))
        self.denoiser.check_size(samples[0].shadow.unsqueeze(0))

        self.params = list(self.restorer.parameters()) + list(self.denoiser.parameters())
        self.opt = torch.optim.AdamW(
            self.params,
            lr=config["train.lr"],
            betas=(config["train.beta1"], config["train.beta2"]),
            weight_decay=config["train.weight_decay"],
        )
        self.weights = LossWeights(config["loss.lambda_high"], config["loss.lambda_cssim"])
        self.gen = torch.Generator().manual_seed(derive_seed(seed, "stream"))
        self.ema = {k: p.detach().clone() for k, p in self.named_params()}
        self.ema_updates = 0
        self.step = 0

    def named_params(self):
        for name, p in self.restorer.named_parameters():
            yield "restorer." + name, p
        for name, p in self.denoiser.named_parameters():
            yield "denoiser." + name, p

    def _draw_batch(self):
        n = self.config["train.batch_size"]
        idx = torch.randint(len(self.samples), (n,), generator=self.gen).tolist()
        pairs = []
        for i in idx:
            sample = self.samples[i]
            if self.config["train.augment"]:
                sample = augment(sample, self.gen)
            pairs.append(sample)
        shadow = torch.stack([p.shadow for p in pairs])
        free = torch.stack([p.shadow_free for p in pairs])
        ids = [p.id for p in pairs]
        return shadow, free, ids

    def train_step(self):
        """One optimizer step on L_content + L_DM + l1*L_high + l2*L_cssim."""
        t0 = time.perf_counter()
        cfg = self.config
        shadow, free, ids = self._draw_batch()

        contrast = contrast_heatmap_batch(shadow, cfg["priors.gamma"])
        highfreq = highfreq_batch(shadow, cfg["priors.highfreq_kernel"])

        content_pred = self.restorer(shadow, contrast)
        l_content = content_loss(content_pred, free)

        x0 = free - shadow
        t = torch.randint(1, self.sched.T + 1, (shadow.shape[0],), generator=self.gen)
        eps = torch.randn(x0.shape, generator=self.gen, dtype=x0.dtype)
        x_t = q_sample(x0, t, eps, self.sched)
        cond = ConditionBundle.build(
            shadow,
            contrast,
            highfreq,
            content_pred,
            condition_on_priors=cfg["diffusion.condition_on_priors"],
            condition_on_content=cfg["diffusion.condition_on_content"],
        )
        x_pred = self.denoiser(x_t, t, cond)

        l_dm = loss_dm(x0, x_pred)
        l_high = loss_high(x0, x_pred, cfg["priors.highfreq_kernel"])
        l_cssim = loss_cssim(free, x_pred, shadow, contrast)

        parts = dict(L_content=l_content, L_DM=l_dm, L_high=l_high, L_cssim=l_cssim)
        for name, value in parts.items():
            if not torch.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss part {name} at step {self.step + 1}; sample ids: {ids}"
                )
        l_total = l_content + total_loss((l_dm, l_high, l_cssim), self.weights)

        self.opt.zero_grad()
        l_total.backward()
        clip = self.config["train.grad_clip"]
        if clip > 0:
            torch.nn.utils.clip_grad_norm_(self.params, clip)
        self.opt.step()
        self.step += 1
        if self.step % cfg["train.ema_every"] == 0:
            self.ema_update()

        return StepMetrics(
            step=self.step,
            loss_content=l_content.item(),
            loss_dm=l_dm.item(),
            loss_high=l_high.item(),
            loss_cssim=l_cssim.item(),
            loss_total=l_total.item(),
            wall_ms=(time.perf_counter() - t0) * 1000.0,
        )

    def ema_update(self):
        """Shadow weights: first call copies, later calls blend with decay."""
        decay = self.config["train.ema_decay"]
        with torch.no_grad():
            for key, p in self.named_params():
                if self.ema_updates == 0:
                    self.ema[key].copy_(p)
                else:
                    self.ema[key].mul_(decay).add_(p, alpha=1.0 - decay)
        self.ema_updates += 1

    def run(self, metrics_path=None, checkpoint_dir=None):
        """Train until train.max_steps, appending one metrics row per step."""
        max_steps = self.config["train.max_steps"]
        every = self.config["train.checkpoint_every"]
        fh = None
        if metrics_path:
            new_file = not os.path.exists(metrics_path) or os.path.getsize(metrics_path) == 0
            fh = open(metrics_path, "a", encoding="utf-8")
            if new_file:
                fh.write(METRICS_HEADER + "\n")
        try:
            while self.step < max_steps:
                metrics = self.train_step()
                if fh:
                    fh.write(metrics.row() + "\n")
                    fh.flush()
                if checkpoint_dir and every > 0 and self.step % every == 0:
                    self.save_checkpoint(os.path.join(checkpoint_dir, f"step_{self.step:07d}.pt"))
        finally:
            if fh:
                fh.close()
        return self

    # --- checkpointing -----------------------------------------------------

    def state_blob(self):
        return {
            "format_version": 1,
            "step": self.step,
            "ema_updates": self.ema_updates,
            "params": {k: p.detach().clone() for k, p in self.named_params()},
            "ema_params": {k: v.clone() for k, v in self.ema.items()},
            "optimizer": self.opt.state_dict(),
            "config": self.config.to_dict(),
            "config_fingerprint": self.config.fingerprint(),
            "rng_state": self.gen.get_state(),
        }

    def save_checkpoint(self, path):
        """Atomic write: temp file in the target directory, then rename."""
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        tmp = path + ".tmp"
        torch.save(self.state_blob(), tmp)
        os.replace(tmp, path)
        return path

    @classmethod
    def from_checkpoint(cls, blob_or_path, samples, config=None):
        """Rebuild a Trainer mid-run. If `config` is given its fingerprint
        must match the checkpoint's; mismatches list the differing keys."""
        blob = load_checkpoint(blob_or_path) if isinstance(blob_or_path, str) else blob_or_path
        saved = Config.from_dict(blob["config"])
        if config is not None and config.fingerprint() != blob["config_fingerprint"]:
            keys = saved.diff(config)
            raise ValidationError(
                "checkpoint config fingerprint mismatch; differing keys: " + ", ".join(keys)
            )
        trainer = cls(config or saved, samples)
        trainer.restorer.load_state_dict(
            {k[len("restorer.") :]: v for k, v in blob["params"].items() if k.startswith("restorer.")}
        )
        trainer.denoiser.load_state_dict(
            {k[len("denoiser.") :]: v for k, v in blob["params"].items() if k.startswith("denoiser.")}
        )
        with torch.no_grad():
            for key, value in blob["ema_params"].items():
                trainer.ema[key].copy_(value)
        trainer.opt.load_state_dict(blob["optimizer"])
        trainer.gen.set_state(blob["rng_state"])
        trainer.step = blob["step"]
        trainer.ema_updates = blob["ema_updates"]
        return trainer
