"""Input validation helpers shared across the package.

Images are torch tensors shaped (C, H, W) with C in {1, 3} and float
values in [0, 1]. Batched code paths use (B, C, H, W) internally; the
checks here guard the single-image contract surface.
"""

import torch

__all__ = ["ValidationError", "check_finite", "check_image", "check_same_shape"]


class ValidationError(ValueError):
    """An input violated a documented contract."""


def _as_float_tensor(x, name):
    if isinstance(x, torch.Tensor):
        t = x
    else:
        try:
            t = torch.as_tensor(x)
        except Exception as exc:
            raise ValidationError(f"{name}: not convertible to a tensor ({exc})")
    if not t.is_floating_point():
        t = t.float()
    return t


def check_finite(x, name="tensor"):
    if not torch.isfinite(x).all():
        raise ValidationError(f"{name}: contains non-finite values")
    return x


def check_image(img, name="image", channels=(1, 3), min_size=1, unit_range=True):
    """Validate a (C, H, W) image tensor and return it as a float tensor."""
    t = _as_float_tensor(img, name)
    if t.dim() != 3:
        raise ValidationError(f"{name}: expected (C, H, W), got shape {tuple(t.shape)}")
    c, h, w = t.shape
    if c not in channels:
        raise ValidationError(f"{name}: channel count {c} not in {tuple(channels)}")
    if h < min_size or w < min_size:
        raise ValidationError(f"{name}: spatial size {h}x{w} below minimum {min_size}")
    check_finite(t, name)
    if unit_range and (t.min().item() < 0.0 or t.max().item() > 1.0):
        raise ValidationError(f"{name}: values outside [0, 1]")
    return t


def check_same_shape(a, b, name_a="a", name_b="b"):
    if tuple(a.shape) != tuple(b.shape):
        raise ValidationError(
            f"shape mismatch: {name_a} {tuple(a.shape)} vs {name_b} {tuple(b.shape)}"
        )
