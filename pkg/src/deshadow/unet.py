"""U-Net backbone shared by both branches.

The content restorer instantiates it with gated dual-branch attention at
selected stages; the diffusion detail refiner instantiates it with a
sinusoidal timestep embedding instead. Stages are numbered by their
downsampling exponent: stage 0 is full resolution, stage ``depth`` is
the bottleneck.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import GatedDualBranchAttention
from .validation import ValidationError

__all__ = ["sinusoidal_time_embedding", "ConvBlock", "UNet"]


def sinusoidal_time_embedding(t, dim):
    """Map integer timesteps (B,) to (B, dim) sin/cos features."""
    if t.dim() == 0:
        t = t.reshape(1)
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half
    ).to(t.device)
    args = t.double().reshape(-1, 1) * freqs.reshape(1, -1)
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ConvBlock(nn.Module):
    """Two 3x3 convs with group norm and SiLU; optional timestep injection."""

    def __init__(self, cin, cout, temb_dim=None):
        super().__init__()
        groups = math.gcd(8, cout)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1, padding_mode="reflect")
        self.norm1 = nn.GroupNorm(groups, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, padding_mode="reflect")
        self.norm2 = nn.GroupNorm(groups, cout)
        self.act = nn.SiLU()
        self.time_proj = nn.Linear(temb_dim, cout) if temb_dim else None

    def forward(self, x, temb=None):
        h = self.act(self.norm1(self.conv1(x)))
        if self.time_proj is not None and temb is not None:
            h = h + self.time_proj(temb)[:, :, None, None]
        return self.act(self.norm2(self.conv2(h)))


class UNet(nn.Module):
    """Encoder/decoder with skip connections and optional extras per stage.

    Args:
        in_channels / out_channels: I/O channel counts.
        base_channels: channels at full resolution; doubled per stage.
        depth: number of down/up stages (inputs must be divisible by 2**depth).
        temb_dim: if set, a timestep embedding is injected into every block.
        agba_stages: stage indices (1..depth) receiving gated dual-branch
            attention; stage ``depth`` is the bottleneck.
        attention keyword args configure those blocks.
    """

    def __init__(
        self,
        in_channels,
        out_channels,
        base_channels=16,
        depth=3,
        temb_dim=None,
        agba_stages=(),
        agba_heads=4,
        agba_embed_dim=32,
        agba_gate_hidden=16,
    ):
        super().__init__()
        if depth < 2:
            raise ValidationError(f"depth must be >= 2, got {depth}")
        agba_stages = tuple(sorted(set(int(s) for s in agba_stages), reverse=True))
        if any(s < 1 or s > depth for s in agba_stages):
            raise ValidationError(f"agba_stages {agba_stages} outside 1..{depth}")
        self.depth = depth
        self.agba_stages = agba_stages
        self.temb_dim = temb_dim

        chs = [base_channels * (2**i) for i in range(depth + 1)]
        self.time_mlp = (
            nn.Sequential(nn.Linear(temb_dim, temb_dim), nn.SiLU(), nn.Linear(temb_dim, temb_dim))
            if temb_dim
            else None
        )
        self.inc = ConvBlock(in_channels, chs[0], temb_dim)
        self.down = nn.ModuleList(
            [ConvBlock(chs[i], chs[i + 1], temb_dim) for i in range(depth)]
        )
        self.up = nn.ModuleList(
            [ConvBlock(chs[i + 1] + chs[i], chs[i], temb_dim) for i in reversed(range(depth))]
        )
        self.pool = nn.AvgPool2d(2)
        self.attn = nn.ModuleDict(
            {
                str(s): GatedDualBranchAttention(
                    feature_channels=chs[s],
                    embed_dim=agba_embed_dim,
                    num_heads=agba_heads,
                    gate_hidden=agba_gate_hidden,
                    cprime_channels=chs[s],
                    block_index=s,
                )
                for s in agba_stages
            }
        )
        self.head = nn.Conv2d(chs[0], out_channels, 3, padding=1, padding_mode="reflect")
        # Zero-initialized head: the network starts as a no-op residual.
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def check_size(self, x):
        h, w = x.shape[-2:]
        m = 2**self.depth
        if h % m or w % m:
            raise ValidationError(
                f"spatial size {h}x{w} not divisible by 2**depth = {m}"
            )

    def forward(self, x, contrast=None, t=None):
        """x: (B, C, H, W); contrast: (B, 1, H, W) when attention is active;
        t: (B,) integer timesteps when built with temb_dim."""
        self.check_size(x)
        temb = None
        if self.time_mlp is not None:
            if t is None:
                raise ValidationError("this network requires timesteps t")
            temb = self.time_mlp(sinusoidal_time_embedding(t, self.temb_dim).to(x.dtype))
        if self.agba_stages and contrast is None:
            raise ValidationError("attention stages require a contrast map")

        feats = [self.inc(x, temb)]
        for block in self.down:
            feats.append(block(self.pool(feats[-1]), temb))

        h = feats[-1]
        if self.depth in self.agba_stages:
            h = self.attn[str(self.depth)](h, contrast, feats[self.depth])
        for i, block in enumerate(self.up):
            stage = self.depth - 1 - i
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = block(torch.cat([h, feats[stage]], dim=1), temb)
            if stage in self.agba_stages:
                h = self.attn[str(stage)](h, contrast, feats[stage])
        return self.head(h)
