"""Reconstruction, ELBO, and total minimax objectives.

Sign conventions: cross_entropy returns the per-pixel mean log-likelihood
(non-positive), and rec_loss = -alpha * L_ce + (1 - alpha) * L_dice flips it
into a standard positive objective. The segmentor minimizes msl + elbo while
the discriminator maximizes msl.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from .config import LossConfig
from .errors import NumericalAbort, ShapeError

CLAMP_EPS = 1e-7
DICE_EPS = 1e-6


def one_hot(labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    """(B, H, W) int labels -> (B, C, H, W) float one-hot."""
    return F.one_hot(labels.long(), num_classes).permute(0, 3, 1, 2).float()


def _check_pair(p: torch.Tensor, y: torch.Tensor) -> None:
    if p.shape != y.shape:
        raise ShapeError(f"prediction shape {tuple(p.shape)} != target {tuple(y.shape)}")


def cross_entropy(p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Per-channel Bernoulli log-likelihood, mean over pixels (and batch).

    L_ce = mean_pixels sum_c [ y_c ln p_c + (1 - y_c) ln(1 - p_c) ], p clamped
    to [1e-7, 1 - 1e-7]. Non-positive; a perfect prediction approaches 0.
    """
    _check_pair(p, y)
    pc = p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
    ll = y * torch.log(pc) + (1.0 - y) * torch.log(1.0 - pc)
    return ll.sum(dim=1).mean()


def dice_loss(p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Soft Dice loss averaged over foreground classes (and batch).

    Per class c >= 1: 1 - (2 sum p_c y_c + eps) / (sum p_c + sum y_c + eps),
    sums over each sample's pixels.
    """
    _check_pair(p, y)
    pf, yf = p[:, 1:], y[:, 1:]
    inter = (pf * yf).sum(dim=(2, 3))
    denom = pf.sum(dim=(2, 3)) + yf.sum(dim=(2, 3))
    dice = (2.0 * inter + DICE_EPS) / (denom + DICE_EPS)
    return (1.0 - dice).mean()


def rec_loss(p: torch.Tensor, y: torch.Tensor, w: LossConfig) -> torch.Tensor:
    """L_rec = -alpha * L_ce + (1 - alpha) * L_dice."""
    return -w.alpha * cross_entropy(p, y) + (1.0 - w.alpha) * dice_loss(p, y)


def elbo_loss(
    rec: torch.Tensor, kls: list[torch.Tensor], w: LossConfig
) -> torch.Tensor:
    """rec + beta * sum of per-scale KLs; negative KL input is a hard error."""
    total_kl = torch.zeros(())
    for i, kl in enumerate(kls):
        if float(kl.detach() if torch.is_tensor(kl) else kl) < -1e-9:
            raise ValueError(f"negative KL at scale {i}: {float(kl)} (upstream bug)")
        total_kl = total_kl + kl
    return rec + w.beta * total_kl


def total_objective(
    msl: torch.Tensor, elbo: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Minimax split: (segmentor loss msl + elbo, discriminator loss -msl)."""
    mv = float(msl.detach() if torch.is_tensor(msl) else msl)
    ev = float(elbo.detach() if torch.is_tensor(elbo) else elbo)
    if not (math.isfinite(mv) and math.isfinite(ev)):
        raise NumericalAbort(f"non-finite objective: msl={mv}, elbo={ev}")
    return msl + elbo, -msl
