"""Training objective for the detail refiner.

Three complementary terms: a pixel loss on the predicted residual, the
same loss after high-pass filtering (penalizing leftover boundary
artifacts that are spatially small but frequency-loud), and a
structural-similarity loss weighted by the contrast heatmap so that
high-contrast regions dominate. Norms follow a per-example RMS
convention so the weights are resolution independent.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .filters import gaussian_kernel2d, reflect_filter2d
from .priors import ContrastHeatmap, highpass_filter, luminance_batch
from .validation import ValidationError, check_same_shape

__all__ = [
    "LossWeights",
    "SSIMParams",
    "loss_dm",
    "loss_high",
    "ssim_map",
    "loss_cssim",
    "total_loss",
]

CSSIM_STABILIZER = 1e-5


@dataclass
class LossWeights:
    lambda_high: float = 0.1  # weight of the high-frequency term
    lambda_cssim: float = 0.1  # weight of the contrast-guided SSIM term

    def __post_init__(self):
        for name in ("lambda_high", "lambda_cssim"):
            v = getattr(self, name)
            if not (v >= 0 and v == v and v != float("inf")):
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class SSIMParams:
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0


def _rms_per_example(diff):
    """sqrt(mean of squares) per example; mean over any leading batch dim."""
    if diff.dim() == 3:
        return diff.pow(2).mean().sqrt()
    return diff.pow(2).mean(dim=tuple(range(1, diff.dim()))).sqrt().mean()


def loss_dm(x0, x_pred):
    """Pixel loss: batch mean of the per-example RMS difference."""
    check_same_shape(x0, x_pred, "x0", "x_pred")
    return _rms_per_example(x0 - x_pred)


def loss_high(x0, x_pred, kernel_id="laplacian3"):
    """Pixel loss applied to the high-pass filtered difference."""
    check_same_shape(x0, x_pred, "x0", "x_pred")
    return _rms_per_example(highpass_filter(x0 - x_pred, kernel_id))


def _ssim_map_batch(a, b, p):
    """Windowed SSIM on luminance; (B, C, H, W) -> (B, 1, H, W)."""
    if a.shape[-1] < p.window_size or a.shape[-2] < p.window_size:
        raise ValidationError(
            f"images {tuple(a.shape[-2:])} smaller than SSIM window {p.window_size}"
        )
    x = luminance_batch(a)
    y = luminance_batch(b)
    win = gaussian_kernel2d(p.window_size, p.sigma).to(x.dtype)
    mu_x = reflect_filter2d(x, win)
    mu_y = reflect_filter2d(y, win)
    var_x = reflect_filter2d(x * x, win) - mu_x * mu_x
    var_y = reflect_filter2d(y * y, win) - mu_y * mu_y
    cov = reflect_filter2d(x * y, win) - mu_x * mu_y
    c1 = (p.k1 * p.data_range) ** 2
    c2 = (p.k2 * p.data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return num / den


def ssim_map(a, b, params=None):
    """Per-location SSIM between two images; (C, H, W) -> (1, H, W)."""
    p = params or SSIMParams()
    check_same_shape(a, b, "a", "b")
    if a.dim() == 3:
        return _ssim_map_batch(a.unsqueeze(0), b.unsqueeze(0), p).squeeze(0)
    return _ssim_map_batch(a, b, p)


def _heatmap_data(c):
    return c.data if isinstance(c, ContrastHeatmap) else c


def loss_cssim(x_gt, x_pred, shadow, c, params=None):
    """Contrast-guided SSIM loss on the reconstructed image x_pred + shadow.

    Per example: 1 - sum(SSIM * c) / (sum(c) + 1e-5). The heatmap is
    bilinearly resized if its spatial dims differ from the images.
    """
    p = params or SSIMParams()
    check_same_shape(x_gt, x_pred, "x_gt", "x_pred")
    check_same_shape(x_gt, shadow, "x_gt", "shadow")
    cmap = _heatmap_data(c)
    squeeze = x_gt.dim() == 3
    if squeeze:
        x_gt, x_pred, shadow = x_gt.unsqueeze(0), x_pred.unsqueeze(0), shadow.unsqueeze(0)
        cmap = cmap.unsqueeze(0)
    if cmap.shape[-2:] != x_gt.shape[-2:]:
        cmap = F.interpolate(cmap, size=x_gt.shape[-2:], mode="bilinear", align_corners=False)
    smap = _ssim_map_batch(x_gt, x_pred + shadow, p)
    weighted = (smap * cmap).sum(dim=(1, 2, 3))
    weight = cmap.sum(dim=(1, 2, 3))
    per_example = 1.0 - weighted / (weight + CSSIM_STABILIZER)
    return per_example.mean()


def total_loss(parts, weights):
    """Weighted sum: dm + lambda_high * high + lambda_cssim * cssim.

    parts: (loss_dm, loss_high, loss_cssim) scalars. A non-finite part
    raises immediately, naming the offender.
    """
    names = ("loss_dm", "loss_high", "loss_cssim")
    vals = []
    for name, part in zip(names, parts):
        t = part if isinstance(part, torch.Tensor) else torch.as_tensor(float(part))
        if not torch.isfinite(t).all():
            raise RuntimeError(f"non-finite loss part: {name}")
        vals.append(t)
    return vals[0] + weights.lambda_high * vals[1] + weights.lambda_cssim * vals[2]
