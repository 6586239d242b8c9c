"""Model construction and single-image inference shared by trainer, CLI
and the estimator facade."""

import hashlib

import torch
import torch.nn.functional as F

from .config import Config
from .diffusion import ConditionBundle, DetailDenoiser, fuse_branches, make_schedule, sample_residual
from .priors import contrast_heatmap_batch, highfreq_batch
from .restorer import ContentRestorer

__all__ = [
    "derive_seed",
    "build_models",
    "load_eval_models",
    "pad_to_multiple",
    "remove_shadow",
]


def derive_seed(seed, tag):
    """Stable 63-bit stream seed for a (base seed, purpose) pair."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFFFFFFFFFFFFFF


def build_models(config):
    """Instantiate both branches and the noise schedule from a Config."""
    restorer = ContentRestorer(
        base_channels=config["model.base_channels"],
        depth=config["model.depth"],
        agba_stages=config.agba_stages(),
        agba_heads=config["model.agba_heads"],
        agba_embed_dim=config["model.agba_embed_dim"],
        agba_gate_hidden=config["model.agba_gate_hidden"],
        use_agba=config["model.use_agba"],
    )
    denoiser = DetailDenoiser(
        base_channels=config["diffusion.base_channels"],
        depth=config["diffusion.depth"],
    )
    sched = make_schedule(config["diffusion.timesteps"], config["diffusion.schedule"])
    return restorer, denoiser, sched


def load_eval_models(blob):
    """Rebuild both branches from a checkpoint blob with EMA weights, eval mode."""
    config = Config.from_dict(blob["config"])
    restorer, denoiser, sched = build_models(config)
    ema = blob["ema_params"]
    restorer.load_state_dict(
        {k[len("restorer.") :]: v for k, v in ema.items() if k.startswith("restorer.")}
    )
    denoiser.load_state_dict(
        {k[len("denoiser.") :]: v for k, v in ema.items() if k.startswith("denoiser.")}
    )
    restorer.eval()
    denoiser.eval()
    return restorer, denoiser, sched, config


def pad_to_multiple(img, multiple):
    """Reflect-pad (C, H, W) on the bottom/right to a size multiple; returns
    (padded, original (H, W))."""
    _, h, w = img.shape
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph == 0 and pw == 0:
        return img, (h, w)
    return F.pad(img.unsqueeze(0), (0, pw, 0, ph), mode="reflect").squeeze(0), (h, w)


def remove_shadow(image, restorer, denoiser, sched, config, generator, steps=None):
    """Full inference chain for one image: priors, content branch,
    residual sampling, fusion. Returns the fused (C, H, W) output."""
    multiple = 2 ** max(config["model.depth"], config["diffusion.depth"])
    padded, (h, w) = pad_to_multiple(image, multiple)
    batch = padded.unsqueeze(0)
    with torch.no_grad():
        contrast = contrast_heatmap_batch(batch, config["priors.gamma"])
        highfreq = highfreq_batch(batch, config["priors.highfreq_kernel"])
        content = restorer(batch, contrast)
        cond = ConditionBundle.build(
            batch,
            contrast,
            highfreq,
            content,
            condition_on_priors=config["diffusion.condition_on_priors"],
            condition_on_content=config["diffusion.condition_on_content"],
        )
        residual = sample_residual(
            cond,
            denoiser,
            sched,
            generator,
            n_steps=steps or config["diffusion.sample_steps"],
        )
        fused = fuse_branches(batch, residual)
    return fused[0, :, :h, :w]
