"""Content restorer: the CNN branch recovering global shadow-free structure.

A residual-predicting U-Net guided by the contrast heatmap through gated
dual-branch attention at its bottleneck and deepest decoder stages. With
the zero-initialized head the branch starts as an identity mapping.
"""

import torch

from .unet import UNet
from .validation import check_same_shape

__all__ = ["ContentRestorer", "content_loss"]


class ContentRestorer(UNet):
    """Predicts shadow-free content as image + learned residual.

    Output values are clamped to [0, 1] in eval mode only; training
    leaves them unclamped so gradients are unaffected.
    """

    def __init__(
        self,
        base_channels=16,
        depth=3,
        agba_stages=(3, 2, 1),
        agba_heads=4,
        agba_embed_dim=32,
        agba_gate_hidden=16,
        use_agba=True,
    ):
        super().__init__(
            in_channels=3,
            out_channels=3,
            base_channels=base_channels,
            depth=depth,
            agba_stages=agba_stages if use_agba else (),
            agba_heads=agba_heads,
            agba_embed_dim=agba_embed_dim,
            agba_gate_hidden=agba_gate_hidden,
        )
        self.use_agba = use_agba

    def forward(self, image, contrast=None):
        residual = super().forward(image, contrast=contrast if self.use_agba else None)
        out = image + residual
        if not self.training:
            out = out.clamp(0.0, 1.0)
        return out


def content_loss(pred, target):
    """Mean absolute error between prediction and ground truth."""
    check_same_shape(pred, target, "pred", "target")
    return (pred - target).abs().mean()
