"""Discriminator over fused image-mask inputs and the multi-scale feature loss.

Fusion multiplies the image elementwise with each mask channel (the real
branch uses one-hot ground truth, the fake branch the soft probability map),
so the discriminator sees masked anatomy rather than raw masks. Its loss is
the mean over layers of mean absolute feature differences between the real
and fake branches.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import DiscriminatorConfig
from .errors import ConfigError, ShapeError


def fuse(img: torch.Tensor, mask: torch.Tensor, mode: str = "product") -> torch.Tensor:
    """Fuse (B, 1, H, W) image with (B, C, H, W) mask channels.

    product: per-class elementwise product img * mask_c (zero where mask is zero).
    concat: channel concatenation [img, mask].
    """
    if img.ndim == 3:
        img = img.unsqueeze(1)
    if img.shape[-2:] != mask.shape[-2:]:
        raise ShapeError(
            f"image shape {tuple(img.shape[-2:])} != mask shape {tuple(mask.shape[-2:])}"
        )
    if mode == "product":
        return img * mask
    if mode == "concat":
        return torch.cat([img, mask], dim=1)
    raise ConfigError(f"unknown fuse_mode {mode!r}")


class DiscriminatorNet(nn.Module):
    """Stack of stride-2 convolutions with leaky activations; batch
    normalization in exactly the last two layers."""

    def __init__(self, in_channels: int, cfg: DiscriminatorConfig):
        super().__init__()
        if cfg.num_layers < 3:
            raise ConfigError(f"discriminator needs >= 3 layers, got {cfg.num_layers}")
        self.num_layers = cfg.num_layers
        self.layers = nn.ModuleList()
        ch_in = in_channels
        for i in range(cfg.num_layers):
            ch_out = cfg.base_channels * min(2**i, 8)
            ops: list[nn.Module] = [nn.Conv2d(ch_in, ch_out, 4, stride=2, padding=1)]
            if i >= cfg.num_layers - 2:
                ops.append(nn.BatchNorm2d(ch_out))
            ops.append(nn.LeakyReLU(cfg.leaky_slope))
            self.layers.append(nn.Sequential(*ops))
            ch_in = ch_out

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Per-layer feature grids d_1..d_C from successive stride-2 convs."""
        side = min(x.shape[-2:])
        if side < 2**self.num_layers:
            raise ShapeError(
                f"input side {side} smaller than 2^{self.num_layers} layers allow"
            )
        feats = []
        for layer in self.layers:
            x = layer(x)
            feats.append(x)
        return feats

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        return self.features(x)


def multiscale_loss(
    real_feats: list[torch.Tensor], fake_feats: list[torch.Tensor]
) -> torch.Tensor:
    """(1/C) sum over layers of mean |d_i(real) - d_i(fake)|."""
    if len(real_feats) != len(fake_feats):
        raise ShapeError(
            f"feature list lengths differ: {len(real_feats)} vs {len(fake_feats)}"
        )
    total = 0.0
    for i, (r, f) in enumerate(zip(real_feats, fake_feats)):
        if r.shape != f.shape:
            raise ShapeError(
                f"layer {i} feature shapes differ: {tuple(r.shape)} vs {tuple(f.shape)}"
            )
        total = total + (r - f).abs().mean()
    return total / len(real_feats)
