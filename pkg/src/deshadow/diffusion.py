"""Conditional diffusion detail refiner.

The branch diffuses the residual between the shadow-free and shadow
image. The denoiser predicts that clean residual directly (not the
noise), conditioned on the shadow image, both priors, and the content
branch output, all concatenated channelwise with the noisy input.
Sampling is plain ancestral DDPM with the posterior variance fixed by
the schedule; fewer steps are supported by respacing the schedule.
"""

from dataclasses import dataclass

import torch

from .unet import UNet
from .validation import ValidationError, check_same_shape

__all__ = [
    "NoiseSchedule",
    "ConditionBundle",
    "DetailDenoiser",
    "make_schedule",
    "q_sample",
    "p_sample_step",
    "sample_residual",
    "fuse_branches",
]

CONDITION_CHANNELS = 10  # shadow(3) + contrast(1) + highfreq(3) + content(3)


@dataclass
class NoiseSchedule:
    """Beta/alpha-bar tables in float64; timesteps run 1..T."""

    T: int
    beta: torch.Tensor  # (T,)
    alpha_bar: torch.Tensor  # (T,), cumulative product of (1 - beta)


def make_schedule(T, kind="linear"):
    """Build a noise schedule.

    kind="linear": beta from 1e-4 to 0.02 regardless of T.
    kind="scaled_linear": linear endpoints scaled by 1000/T, keeping the
    terminal alpha-bar comparable across step counts.
    """
    if T < 2:
        raise ValidationError(f"schedule needs T >= 2, got {T}")
    if kind == "linear":
        beta = torch.linspace(1e-4, 0.02, T, dtype=torch.float64)
    elif kind == "scaled_linear":
        scale = 1000.0 / T
        beta = torch.linspace(scale * 1e-4, scale * 0.02, T, dtype=torch.float64)
    else:
        raise ValidationError(f"unknown schedule kind: {kind!r}")
    if beta.max() >= 1.0:
        raise ValidationError(f"schedule kind {kind!r} with T={T} pushes beta past 1")
    alpha_bar = torch.cumprod(1.0 - beta, dim=0)
    return NoiseSchedule(T=T, beta=beta, alpha_bar=alpha_bar)


def _gather_alpha_bar(sched, t, like):
    """alpha_bar at timestep(s) t (1-based), shaped to broadcast over `like`."""
    if isinstance(t, int):
        if not 1 <= t <= sched.T:
            raise ValidationError(f"timestep {t} outside 1..{sched.T}")
        return sched.alpha_bar[t - 1].to(like.dtype)
    t = torch.as_tensor(t)
    if t.min() < 1 or t.max() > sched.T:
        raise ValidationError(f"timesteps outside 1..{sched.T}")
    a = sched.alpha_bar[t - 1].to(like.dtype)
    return a.reshape(-1, *([1] * (like.dim() - 1)))


def q_sample(x0, t, eps, sched):
    """Forward process: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    check_same_shape(x0, eps, "x0", "eps")
    a = _gather_alpha_bar(sched, t, x0)
    return torch.sqrt(a) * x0 + torch.sqrt(1.0 - a) * eps


@dataclass
class ConditionBundle:
    """Conditioning stack with a fixed concatenation order.

    All tensors share spatial dims; 3D (single image) and 4D (batched)
    layouts are both accepted. Disabled cue groups are stored as zeros
    so the channel count never changes.
    """

    shadow_image: torch.Tensor  # (…, 3, H, W)
    contrast: torch.Tensor  # (…, 1, H, W)
    highfreq: torch.Tensor  # (…, 3, H, W)
    content_pred: torch.Tensor  # (…, 3, H, W), stop-gradient

    def __post_init__(self):
        hw = self.shadow_image.shape[-2:]
        for name in ("contrast", "highfreq", "content_pred"):
            if getattr(self, name).shape[-2:] != hw:
                raise ValidationError(f"condition {name} spatial dims differ from shadow image")

    @classmethod
    def build(
        cls,
        shadow_image,
        contrast,
        highfreq,
        content_pred,
        condition_on_priors=True,
        condition_on_content=True,
    ):
        """Assemble the bundle, zeroing disabled cues and detaching the
        content prediction so diffusion losses cannot reach the content
        branch through its conditioning path."""
        if not condition_on_priors:
            contrast = torch.zeros_like(contrast)
            highfreq = torch.zeros_like(highfreq)
        content_pred = content_pred.detach()
        if not condition_on_content:
            content_pred = torch.zeros_like(content_pred)
        return cls(shadow_image, contrast, highfreq, content_pred)

    def to_tensor(self):
        return torch.cat(
            [self.shadow_image, self.contrast, self.highfreq, self.content_pred], dim=-3
        )


class DetailDenoiser(UNet):
    """U-Net predicting the clean residual from a noisy one plus conditions.

    The timestep enters through a sinusoidal embedding added inside
    every block; the zero-initialized head makes the initial prediction
    identically zero.
    """

    def __init__(self, base_channels=16, depth=3):
        super().__init__(
            in_channels=3 + CONDITION_CHANNELS,
            out_channels=3,
            base_channels=base_channels,
            depth=depth,
            temb_dim=4 * base_channels,
        )

    def forward(self, x_t, t, cond):
        cond_t = cond.to_tensor() if isinstance(cond, ConditionBundle) else cond
        if cond_t.shape[-2:] != x_t.shape[-2:]:
            raise ValidationError("condition spatial dims do not match x_t")
        if isinstance(t, int):
            t = torch.full((x_t.shape[0],), t, dtype=torch.long)
        return super().forward(torch.cat([x_t, cond_t], dim=-3), t=t)


def _posterior_coefs(a_t, a_prev, dtype):
    """Coefficients of q(x_{t-1} | x_t, x0) for alpha-bar pair (a_t, a_prev)."""
    alpha_t = a_t / a_prev
    beta_t = 1.0 - alpha_t
    coef_x0 = torch.sqrt(a_prev) * beta_t / (1.0 - a_t)
    coef_xt = torch.sqrt(alpha_t) * (1.0 - a_prev) / (1.0 - a_t)
    var = beta_t * (1.0 - a_prev) / (1.0 - a_t)
    return coef_x0.to(dtype), coef_xt.to(dtype), var.to(dtype)


def p_sample_step(x_t, t, cond, model, sched, generator=None, model_t=None):
    """One reverse step x_t -> x_{t-1}.

    The posterior mean is computed from the model's predicted clean
    residual (clamped to [-1, 1]); the variance is the fixed schedule
    posterior. At t=1 the mean is returned without noise.
    """
    if isinstance(t, int) and not 1 <= t <= sched.T:
        raise ValidationError(f"timestep {t} outside 1..{sched.T}")
    a_t = sched.alpha_bar[t - 1]
    a_prev = sched.alpha_bar[t - 2] if t > 1 else torch.tensor(1.0, dtype=torch.float64)
    x0_hat = model(x_t, model_t if model_t is not None else t, cond).clamp(-1.0, 1.0)
    coef_x0, coef_xt, var = _posterior_coefs(a_t, a_prev, x_t.dtype)
    mean = coef_x0 * x0_hat + coef_xt * x_t
    if t == 1:
        return mean
    noise = torch.randn(x_t.shape, generator=generator, dtype=x_t.dtype)
    return mean + torch.sqrt(var) * noise


def respace_timesteps(T, n_steps):
    """Evenly strided subset of 1..T, descending, always containing T."""
    if not 1 <= n_steps <= T:
        raise ValidationError(f"n_steps {n_steps} outside 1..{T}")
    if n_steps == 1:
        return [T]
    ts = torch.linspace(1, T, n_steps, dtype=torch.float64).round().long()
    ts = torch.unique(ts, sorted=True)
    return ts.flip(0).tolist()


def sample_residual(cond, model, sched, generator, n_steps=None, shape=None):
    """Run the reverse chain from pure noise; output clamped to [-1, 1].

    n_steps < T walks an evenly respaced sub-schedule; the denoiser
    always sees the original timestep values.
    """
    cond_t = cond.to_tensor() if isinstance(cond, ConditionBundle) else cond
    if shape is None:
        shape = (*cond_t.shape[:-3], 3, *cond_t.shape[-2:])
    n_steps = sched.T if n_steps is None else n_steps
    ts = respace_timesteps(sched.T, n_steps)
    abar = [sched.alpha_bar[t - 1] for t in ts]  # descending t -> increasing abar
    abar.append(torch.tensor(1.0, dtype=torch.float64))

    x = torch.randn(shape, generator=generator, dtype=cond_t.dtype)
    for i, t in enumerate(ts):
        x0_hat = model(x, t, cond).clamp(-1.0, 1.0)
        coef_x0, coef_xt, var = _posterior_coefs(abar[i], abar[i + 1], x.dtype)
        x = coef_x0 * x0_hat + coef_xt * x
        if i < len(ts) - 1:
            noise = torch.randn(x.shape, generator=generator, dtype=x.dtype)
            x = x + torch.sqrt(var) * noise
    return x.clamp(-1.0, 1.0)


def fuse_branches(image, residual):
    """Final output: shadow image plus sampled residual, clamped to [0, 1]."""
    check_same_shape(image, residual, "image", "residual")
    return (image + residual).clamp(0.0, 1.0)
