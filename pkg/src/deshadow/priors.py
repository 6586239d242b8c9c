"""Non-learned spatial priors that condition the whole pipeline.

Two cues are extracted from the shadow image alone: a contrast heatmap
(how far each pixel's luminance departs from the image mean, amplified
by a contrast factor and min-max normalized to [0, 1]) and a high-pass
cue map emphasizing edges and texture. Neither uses a shadow mask.
"""

from dataclasses import dataclass

import torch

from .filters import gaussian_blur, reflect_filter2d
from .validation import ValidationError, check_image

__all__ = [
    "ContrastHeatmap",
    "HighFreqMap",
    "LUMA_WEIGHTS",
    "LAPLACIAN_3X3",
    "HIGHFREQ_KERNELS",
    "luminance",
    "compute_contrast_heatmap",
    "compute_highfreq_map",
    "contrast_heatmap_batch",
    "highfreq_batch",
]

# ITU-R BT.601 luma weights.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# Zero-DC isotropic high-pass kernel.
LAPLACIAN_3X3 = torch.tensor(
    [[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]], dtype=torch.float64
)

# kernel_id -> description; "gaussian_residual" is image minus its blur.
HIGHFREQ_KERNELS = {
    "laplacian3": "3x3 Laplacian, reflect padding",
    "gaussian_residual": "identity minus Gaussian blur (sigma=1.0)",
}

_GAUSS_RESIDUAL_SIGMA = 1.0


@dataclass
class ContrastHeatmap:
    """Single-channel contrast prior, min-max normalized to [0, 1]."""

    data: torch.Tensor  # (1, H, W)
    gamma: float
    mu: float
    raw_min: float = 0.0
    raw_max: float = 0.0


@dataclass
class HighFreqMap:
    """Per-channel high-pass response of an image."""

    data: torch.Tensor  # (C, H, W)
    kernel_id: str


def luminance(image):
    """Collapse a 1- or 3-channel image to a (1, H, W) luminance map.

    3-channel inputs use fixed 0.299/0.587/0.114 weights; 1-channel
    inputs are returned unchanged.
    """
    img = check_image(image, "image", unit_range=False)
    if img.shape[0] == 1:
        return img
    w = torch.tensor(LUMA_WEIGHTS, dtype=img.dtype).view(3, 1, 1)
    return (img * w).sum(dim=0, keepdim=True)


def _normalize_minmax(raw):
    lo = raw.amin()
    hi = raw.amax()
    span = hi - lo
    if span <= 0:
        # No contrast anywhere -> no shadow evidence.
        return torch.zeros_like(raw), float(lo), float(hi)
    return (raw - lo) / span, float(lo), float(hi)


def compute_contrast_heatmap(image, gamma=2.0):
    """Amplify luminance departures from the image mean into a [0, 1] map.

    raw(x, y) = mu + gamma * (L(x, y) - mu) with mu the mean luminance;
    the stored map is (raw - min) / (max - min), all zeros for a
    constant image.
    """
    if not (gamma > 0):
        raise ValidationError(f"gamma must be > 0, got {gamma}")
    img = check_image(image, "image")
    lum = luminance(img)
    mu = lum.mean()
    raw = mu + gamma * (lum - mu)
    data, lo, hi = _normalize_minmax(raw)
    return ContrastHeatmap(data=data, gamma=float(gamma), mu=float(mu), raw_min=lo, raw_max=hi)


def compute_highfreq_map(image, kernel_id="laplacian3"):
    """Per-channel high-pass filtering with reflect padding.

    A constant image maps to (numerically) zero response for every
    kernel variant.
    """
    img = check_image(image, "image")
    if kernel_id == "laplacian3":
        data = reflect_filter2d(img, LAPLACIAN_3X3.to(img.dtype))
    elif kernel_id == "gaussian_residual":
        data = img - gaussian_blur(img, _GAUSS_RESIDUAL_SIGMA)
    else:
        raise ValidationError(f"unknown high-frequency kernel: {kernel_id!r}")
    return HighFreqMap(data=data, kernel_id=kernel_id)


def highpass_filter(x, kernel_id="laplacian3"):
    """High-pass filter an arbitrary (possibly batched) tensor.

    Unlike compute_highfreq_map this skips image validation so it can be
    applied to residuals and batches inside the loss suite.
    """
    if kernel_id == "laplacian3":
        return reflect_filter2d(x, LAPLACIAN_3X3.to(x.dtype))
    if kernel_id == "gaussian_residual":
        return x - gaussian_blur(x, _GAUSS_RESIDUAL_SIGMA)
    raise ValidationError(f"unknown high-frequency kernel: {kernel_id!r}")


def luminance_batch(images):
    """(B, C, H, W) -> (B, 1, H, W) luminance."""
    if images.shape[1] == 1:
        return images
    w = torch.tensor(LUMA_WEIGHTS, dtype=images.dtype).view(1, 3, 1, 1)
    return (images * w).sum(dim=1, keepdim=True)


def contrast_heatmap_batch(images, gamma=2.0):
    """Batched contrast heatmaps, normalized per image: (B, 3|1, H, W) -> (B, 1, H, W)."""
    lum = luminance_batch(images)
    mu = lum.mean(dim=(1, 2, 3), keepdim=True)
    raw = mu + gamma * (lum - mu)
    lo = raw.amin(dim=(1, 2, 3), keepdim=True)
    hi = raw.amax(dim=(1, 2, 3), keepdim=True)
    span = hi - lo
    flat = span <= 0
    span = torch.where(flat, torch.ones_like(span), span)
    out = (raw - lo) / span
    return torch.where(flat, torch.zeros_like(out), out)


def highfreq_batch(images, kernel_id="laplacian3"):
    """Batched high-pass cue maps: (B, C, H, W) -> (B, C, H, W)."""
    return highpass_filter(images, kernel_id)
