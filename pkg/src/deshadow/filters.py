"""Reflect-padded 2D filtering and Gaussian kernel helpers."""

import math

import torch
import torch.nn.functional as F

__all__ = ["reflect_filter2d", "gaussian_kernel1d", "gaussian_kernel2d", "gaussian_blur"]


def reflect_filter2d(x, kernel):
    """Per-channel cross-correlation with reflect padding; preserves shape.

    x: (C, H, W) or (B, C, H, W); kernel: (kh, kw).
    """
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    c = x.shape[1]
    kh, kw = kernel.shape
    weight = kernel.to(x.dtype).view(1, 1, kh, kw).expand(c, 1, kh, kw).contiguous()
    padded = F.pad(x, (kw // 2, kw // 2, kh // 2, kh // 2), mode="reflect")
    y = F.conv2d(padded, weight, groups=c)
    return y.squeeze(0) if squeeze else y


def gaussian_kernel1d(sigma, radius=None):
    """Normalized 1D Gaussian, truncated at 3 sigma by default."""
    if radius is None:
        radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = torch.arange(-radius, radius + 1, dtype=torch.float64)
    k = torch.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def gaussian_kernel2d(size, sigma):
    """size x size Gaussian window normalized to sum 1."""
    half = (size - 1) / 2.0
    xs = torch.arange(size, dtype=torch.float64) - half
    g = torch.exp(-0.5 * (xs / sigma) ** 2)
    k = torch.outer(g, g)
    return k / k.sum()


def gaussian_blur(x, sigma):
    """Separable Gaussian blur with reflect padding. sigma <= 0 is a no-op."""
    if sigma <= 0:
        return x.clone()
    k1 = gaussian_kernel1d(sigma)
    y = reflect_filter2d(x, k1.view(-1, 1))
    return reflect_filter2d(y, k1.view(1, -1))
