"""Adaptive gated dual-branch attention.

Queries come from the feature map being refined. Keys and values are
produced twice, once from the contrast heatmap and once from image
features, then blended per pixel by a learned sigmoid gate before
multi-head scaled-dot-product attention. The gate decides, location by
location, how much to trust the contrast prior versus image content.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .validation import ValidationError

__all__ = ["GatedDualBranchAttention"]


class GatedDualBranchAttention(nn.Module):
    """Attention over flattened spatial tokens with gate-fused dual K/V.

    Args:
        feature_channels: channels of the feature map entering the block.
        embed_dim: total attention width d (split across heads).
        num_heads: attention heads; head outputs are concatenated and
            linearly mixed.
        gate_hidden: hidden width of the per-pixel gate MLP.
        cprime_channels: channels of the image-branch input (defaults to
            feature_channels).
        block_index: identifier reported in numerical-fault messages.
    """

    def __init__(
        self,
        feature_channels,
        embed_dim=32,
        num_heads=4,
        gate_hidden=16,
        cprime_channels=None,
        block_index=0,
    ):
        super().__init__()
        if embed_dim % num_heads != 0:
            raise ValidationError(
                f"embed_dim {embed_dim} not divisible by num_heads {num_heads}"
            )
        if min(feature_channels, embed_dim, num_heads, gate_hidden) < 1:
            raise ValidationError("all attention dimensions must be >= 1")
        cprime_channels = cprime_channels or feature_channels
        self.feature_channels = feature_channels
        self.embed_dim = embed_dim
        self.num_heads = num_heads
        self.block_index = block_index

        # Shallow single-conv encoders keep both priors close to raw.
        self.tau = nn.Sequential(
            nn.Conv2d(1, feature_channels, 3, padding=1, padding_mode="reflect"),
            nn.SiLU(),
        )
        self.tau_hat = nn.Sequential(
            nn.Conv2d(cprime_channels, feature_channels, 3, padding=1, padding_mode="reflect"),
            nn.SiLU(),
        )
        # Per-token two-layer MLP -> scalar gate logit.
        self.gate_mlp = nn.Sequential(
            nn.Linear(2 * feature_channels, gate_hidden),
            nn.SiLU(),
            nn.Linear(gate_hidden, 1),
        )
        self.w_q = nn.Linear(feature_channels, embed_dim, bias=False)
        self.w_k = nn.Linear(feature_channels, embed_dim, bias=False)
        self.w_v = nn.Linear(feature_channels, embed_dim, bias=False)
        self.w_k_hat = nn.Linear(feature_channels, embed_dim, bias=False)
        self.w_v_hat = nn.Linear(feature_channels, embed_dim, bias=False)
        self.out_proj = nn.Linear(embed_dim, feature_channels)

    @staticmethod
    def _to_tokens(x):
        # (B, C, H, W) -> (B, H*W, C)
        b, c, h, w = x.shape
        return x.reshape(b, c, h * w).transpose(1, 2)

    def encode_priors(self, c, c_prime, size):
        """Encode both priors into token grids of shape (B, H'*W', C).

        c: (B, 1, Hc, Wc) contrast heatmap; c_prime: (B, Cc, Hp, Wp)
        image features. Both are bilinearly resized to ``size`` first.
        """
        h, w = size
        if c.shape[-2:] != (h, w):
            c = F.interpolate(c, size=(h, w), mode="bilinear", align_corners=False)
        if c_prime.shape[-2:] != (h, w):
            c_prime = F.interpolate(c_prime, size=(h, w), mode="bilinear", align_corners=False)
        return self._to_tokens(self.tau(c)), self._to_tokens(self.tau_hat(c_prime))

    def compute_gate(self, tau_c, tau_c_prime, size):
        """Per-pixel sigmoid gate in (0, 1), returned as (B, 1, H', W')."""
        if tau_c.shape != tau_c_prime.shape:
            raise ValidationError(
                f"token grids differ: {tuple(tau_c.shape)} vs {tuple(tau_c_prime.shape)}"
            )
        logits = self.gate_mlp(torch.cat([tau_c, tau_c_prime], dim=-1))  # (B, HW, 1)
        gate = torch.sigmoid(logits)
        h, w = size
        return gate.transpose(1, 2).reshape(-1, 1, h, w)

    def gated_kv(self, tau_c, tau_c_prime, gate):
        """Blend dual-branch keys/values: g*contrast branch + (1-g)*image branch.

        gate: (B, 1, H', W') or (B, HW, 1), broadcast over token channels.
        """
        if gate.dim() == 4:
            g = gate.reshape(gate.shape[0], 1, -1).transpose(1, 2)  # (B, HW, 1)
        else:
            g = gate
        k_bar = g * self.w_k(tau_c) + (1 - g) * self.w_k_hat(tau_c_prime)
        v_bar = g * self.w_v(tau_c) + (1 - g) * self.w_v_hat(tau_c_prime)
        return k_bar, v_bar

    def attend(self, z_tokens, k_bar, v_bar, return_weights=False):
        """Multi-head scaled-dot-product attention over spatial tokens.

        z_tokens: (B, N, C); k_bar/v_bar: (B, N, d). Returns (B, N, C).
        """
        b, n, _ = z_tokens.shape
        heads, dh = self.num_heads, self.embed_dim // self.num_heads
        q = self.w_q(z_tokens).reshape(b, n, heads, dh)
        k = k_bar.reshape(b, -1, heads, dh)
        v = v_bar.reshape(b, -1, heads, dh)
        scores = torch.einsum("bihd,bjhd->bhij", q, k) / math.sqrt(dh)
        if not torch.isfinite(scores).all():
            raise RuntimeError(
                f"non-finite attention logits in gated attention block {self.block_index}"
            )
        weights = torch.softmax(scores, dim=-1)
        out = torch.einsum("bhij,bjhd->bihd", weights, v).reshape(b, n, self.embed_dim)
        out = self.out_proj(out)
        if return_weights:
            return out, weights
        return out

    def forward(self, z, c, c_prime, gate_override=None):
        """Refine z with gated dual-branch attention; residual output.

        z: (B, C, H', W'); c: (B, 1, *, *); c_prime: (B, Cc, *, *).
        gate_override replaces the learned gate (used to probe the
        branch endpoints); shape broadcastable to (B, 1, H', W').
        """
        b, ch, h, w = z.shape
        tau_c, tau_cp = self.encode_priors(c, c_prime, (h, w))
        if gate_override is None:
            gate = self.compute_gate(tau_c, tau_cp, (h, w))
        else:
            gate = torch.as_tensor(gate_override, dtype=z.dtype).expand(b, 1, h, w)
        k_bar, v_bar = self.gated_kv(tau_c, tau_cp, gate)
        out = self.attend(self._to_tokens(z), k_bar, v_bar)
        out = out.transpose(1, 2).reshape(b, ch, h, w)
        return z + out
