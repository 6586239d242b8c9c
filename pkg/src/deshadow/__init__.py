"""Mask-free shadow removal.

A dual-branch restoration pipeline: a contrast heatmap and a high-pass
cue map condition both a gated-attention U-Net content restorer and a
conditional diffusion detail refiner; the sampled residual is fused
with the input to produce the shadow-free image.
"""

from .attention import GatedDualBranchAttention
from .config import Config
from .diffusion import (
    ConditionBundle,
    DetailDenoiser,
    NoiseSchedule,
    fuse_branches,
    make_schedule,
    p_sample_step,
    q_sample,
    sample_residual,
)
from .evaluate import evaluate_dir, psnr, ssim
from .losses import LossWeights, SSIMParams, loss_cssim, loss_dm, loss_high, ssim_map, total_loss
from .priors import (
    ContrastHeatmap,
    HighFreqMap,
    compute_contrast_heatmap,
    compute_highfreq_map,
    luminance,
)
from .restorer import ContentRestorer, content_loss
from .trainer import Trainer, load_checkpoint
from .validation import ValidationError

__version__ = "0.1.0"

__all__ = [
    "GatedDualBranchAttention",
    "Config",
    "ConditionBundle",
    "DetailDenoiser",
    "NoiseSchedule",
    "fuse_branches",
    "make_schedule",
    "p_sample_step",
    "q_sample",
    "sample_residual",
    "evaluate_dir",
    "psnr",
    "ssim",
    "LossWeights",
    "SSIMParams",
    "loss_cssim",
    "loss_dm",
    "loss_high",
    "ssim_map",
    "total_loss",
    "ContrastHeatmap",
    "HighFreqMap",
    "compute_contrast_heatmap",
    "compute_highfreq_map",
    "luminance",
    "ContentRestorer",
    "content_loss",
    "Trainer",
    "load_checkpoint",
    "ValidationError",
    "ShadowRemover",
]


def __getattr__(name):
    # Deferred: pulls in scikit-learn only when the estimator is used.
    if name == "ShadowRemover":
        from .estimator import ShadowRemover

        return ShadowRemover
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
