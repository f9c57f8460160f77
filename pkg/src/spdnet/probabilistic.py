"""Hierarchical Gaussian prior and posterior nets over per-scale latent grids.

Both nets share one U-Net architecture and differ only in input channels: the
prior sees the image, the posterior the image concatenated with one-hot
labels. At each decoder scale a 1x1 convolution head emits (mu, sigma); the
scale's sample is concatenated back into the features before upsampling, so
coarse draws condition finer distributions. sigma is a standard deviation,
kept positive by softplus plus a small epsilon.

Scales are indexed coarse to fine: scale 0 is the smallest grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .config import ProbabilisticConfig
from .errors import ShapeError

SIGMA_EPS = 1e-6


@dataclass
class GaussianGrid:
    """One scale's diagonal Gaussian: mu, sigma (std dev), and its sample."""

    mu: torch.Tensor
    sigma: torch.Tensor
    scale_index: int
    z: torch.Tensor | None = None


@dataclass
class LatentHierarchy:
    """Per-scale GaussianGrids ordered coarse to fine."""

    per_scale: list[GaussianGrid]

    @property
    def samples(self) -> list[torch.Tensor]:
        return [g.z for g in self.per_scale]

    def __len__(self) -> int:
        return len(self.per_scale)


def sample_latent(
    grid: GaussianGrid, rng: torch.Generator | None = None
) -> torch.Tensor:
    """Reparameterized draw z = mu + sigma * eps; gradients flow to mu and sigma."""
    eps = torch.randn(grid.mu.shape, generator=rng, dtype=grid.mu.dtype)
    return grid.mu + grid.sigma * eps


def kl_divergence(q: GaussianGrid, p: GaussianGrid) -> torch.Tensor:
    """Closed-form diagonal-Gaussian KL(q || p).

    Summed over grid elements; for batched (B, k, H, W) grids the per-sample
    sums are averaged over the batch. Evaluated in float64 so the sum of
    non-negative per-element terms cannot round negative.
    """
    if q.mu.shape != p.mu.shape:
        raise ShapeError(f"KL shape mismatch: {tuple(q.mu.shape)} vs {tuple(p.mu.shape)}")
    mu_q, sig_q = q.mu.double(), q.sigma.double()
    mu_p, sig_p = p.mu.double(), p.sigma.double()
    term = (
        torch.log(sig_p / sig_q)
        + (sig_q**2 + (mu_q - mu_p) ** 2) / (2.0 * sig_p**2)
        - 0.5
    )
    if term.ndim == 4:
        return term.sum(dim=(1, 2, 3)).mean()
    return term.sum()


class _Down(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.GELU(),
        )

    def forward(self, x):
        return self.body(x)


class HierarchicalGaussianNet(nn.Module):
    """U-Net emitting L per-scale Gaussian grids, coarse to fine.

    The encoder downsamples by 2 per level until the coarsest latent side
    (input_side / 2^num_downs); the decoder emits a (mu, sigma) head at each
    of the L finest scales on the way back up.
    """

    def __init__(self, in_channels: int, cfg: ProbabilisticConfig, num_scales: int, num_downs: int):
        super().__init__()
        if num_downs < num_scales - 1:
            raise ValueError("num_downs must cover num_scales - 1 upsampling steps")
        self.num_scales = num_scales
        self.num_downs = num_downs
        self.latent_channels = cfg.latent_channels
        base = list(cfg.channels)
        # Encoder channel at depth d (0 = full res): clamp index into the list.
        enc = [base[min(d, len(base) - 1)] for d in range(num_downs + 1)]
        enc[0] = base[0]
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, enc[0], 3, padding=1), nn.GELU()
        )
        self.downs = nn.ModuleList(
            _Down(enc[d], enc[d + 1]) for d in range(num_downs)
        )
        k = cfg.latent_channels
        self.heads = nn.ModuleList()
        self.ups = nn.ModuleList()
        self.dec_convs = nn.ModuleList()
        # Decoder scale j sits at encoder depth (num_downs - j).
        for j in range(num_scales):
            depth = num_downs - j
            self.heads.append(nn.Conv2d(enc[depth], 2 * k, 1))
            if j + 1 < num_scales:
                self.ups.append(
                    nn.ConvTranspose2d(enc[depth] + k, enc[depth - 1], 2, stride=2)
                )
                self.dec_convs.append(
                    nn.Sequential(
                        nn.Conv2d(2 * enc[depth - 1], enc[depth - 1], 3, padding=1),
                        nn.GELU(),
                    )
                )

    def forward(
        self,
        x: torch.Tensor,
        rng: torch.Generator | None = None,
        sample: bool = True,
        inject: list[torch.Tensor] | None = None,
    ) -> LatentHierarchy:
        """Emit the hierarchy; sample=False uses z = mu (deterministic mean mode).

        inject supplies external per-scale samples (coarse to fine) used for
        the net's own conditioning instead of fresh draws, so a prior can be
        evaluated along the posterior's sampling path during training.
        """
        if inject is not None and len(inject) != self.num_scales:
            raise ShapeError(f"expected {self.num_scales} injected samples, got {len(inject)}")
        feats = [self.stem(x)]
        for down in self.downs:
            feats.append(down(feats[-1]))
        grids: list[GaussianGrid] = []
        h = feats[-1]
        for j in range(self.num_scales):
            raw = self.heads[j](h)
            k = self.latent_channels
            mu, sigma = raw[:, :k], F.softplus(raw[:, k:]) + SIGMA_EPS
            grid = GaussianGrid(mu, sigma, scale_index=j)
            if inject is not None:
                if inject[j].shape != mu.shape:
                    raise ShapeError(
                        f"injected sample {j} shape {tuple(inject[j].shape)} != {tuple(mu.shape)}"
                    )
                grid.z = inject[j]
            elif sample:
                grid.z = sample_latent(grid, rng)
            else:
                grid.z = mu
            grids.append(grid)
            if j + 1 < self.num_scales:
                h = self.ups[j](torch.cat([h, grid.z], dim=1))
                skip = feats[self.num_downs - j - 1]
                h = self.dec_convs[j](torch.cat([h, skip], dim=1))
        return LatentHierarchy(grids)


class PriorNet(HierarchicalGaussianNet):
    """p_i(z_i | x_i): conditions on the image alone."""

    def __init__(self, cfg: ProbabilisticConfig, num_scales: int, num_downs: int):
        super().__init__(1, cfg, num_scales, num_downs)


class PosteriorNet(HierarchicalGaussianNet):
    """q(z_i | x_i, y_i): conditions on the image and one-hot labels."""

    def __init__(self, cfg: ProbabilisticConfig, num_scales: int, num_downs: int, num_classes: int):
        super().__init__(1 + num_classes, cfg, num_scales, num_downs)
        self.num_classes = num_classes

    def forward(
        self,
        x: torch.Tensor,
        labels: torch.Tensor | None = None,
        rng: torch.Generator | None = None,
        sample: bool = True,
        inject: list[torch.Tensor] | None = None,
    ) -> LatentHierarchy:
        if labels is None:
            raise ValueError("posterior requires labels")
        if labels.shape[-2:] != x.shape[-2:]:
            raise ShapeError(
                f"label shape {tuple(labels.shape[-2:])} != image shape {tuple(x.shape[-2:])}"
            )
        if int(labels.max()) >= self.num_classes:
            raise ValueError(
                f"label value {int(labels.max())} >= num_classes {self.num_classes}"
            )
        onehot = F.one_hot(labels.long(), self.num_classes).permute(0, 3, 1, 2).to(x.dtype)
        return super().forward(
            torch.cat([x, onehot], dim=1), rng=rng, sample=sample, inject=inject
        )


def zero_latents(
    template: LatentHierarchy | list[torch.Tensor],
) -> list[torch.Tensor]:
    """Zero grids shaped like the hierarchy's samples (latent-ablation path)."""
    zs = template.samples if isinstance(template, LatentHierarchy) else template
    return [torch.zeros_like(z) for z in zs]


def hierarchy_kl(q: LatentHierarchy, p: LatentHierarchy) -> list[torch.Tensor]:
    """Per-scale KLs, coarse to fine; total hierarchy KL is their sum."""
    if len(q) != len(p):
        raise ShapeError(f"hierarchy depth mismatch: {len(q)} vs {len(p)}")
    return [kl_divergence(qi, pi) for qi, pi in zip(q.per_scale, p.per_scale)]
