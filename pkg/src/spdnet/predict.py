"""Inference: pad, run the segmentor with prior latents, crop, argmax.

Latent modes: "prior_mean" runs the prior in mean mode (z = mu at every
scale, deterministic); "prior_sample" averages class probabilities over N
independent prior draws and emits a per-pixel disagreement map (variance of
the probabilities across draws, summed over classes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .data.transforms import crop_to_shape, pad_to_square_multiple
from .data.types import Image

LATENT_MODES = ("prior_mean", "prior_sample", "zero")


@dataclass
class SegmentationResult:
    labels: np.ndarray
    probs: np.ndarray
    uncertainty: np.ndarray | None
    samples: int


def zero_latent_grids(bundle, batch: int, side: int) -> list[torch.Tensor]:
    """Zero per-scale latents (coarse to fine) for the latent-ablation path."""
    cfg = bundle.config.segmentor
    k = cfg.latent_channels_per_scale
    n = cfg.num_stages
    return [
        torch.zeros(batch, k, cfg.level_side(side, n - 1 - j), cfg.level_side(side, n - 1 - j))
        for j in range(n)
    ]


def _forward_probs(bundle, x: torch.Tensor, latent_mode: str, rng) -> torch.Tensor:
    if bundle.prior is None or latent_mode == "zero":
        z = zero_latent_grids(bundle, x.shape[0], x.shape[-1])
    elif latent_mode == "prior_mean":
        z = bundle.prior(x, sample=False).samples
    elif latent_mode == "prior_sample":
        z = bundle.prior(x, rng=rng).samples
    else:
        raise ValueError(f"unknown latent_mode {latent_mode!r}; expected {LATENT_MODES}")
    return bundle.segmentor(x, z)


def segment_image(
    bundle,
    image: Image,
    latent_mode: str = "prior_mean",
    samples: int = 1,
    rng: torch.Generator | None = None,
) -> SegmentationResult:
    """Segment one image; returns labels, probabilities, and (for N > 1 in
    prior_sample mode) the inter-sample disagreement map, all at input shape."""
    pixels = image.pixels
    orig_shape = pixels.shape
    multiple = bundle.config.segmentor.required_multiple()
    padded = pad_to_square_multiple(pixels.astype(np.float32), multiple)
    x = torch.from_numpy(padded).unsqueeze(0).unsqueeze(0)

    bundle.segmentor.eval()
    if bundle.prior is not None:
        bundle.prior.eval()
    with torch.no_grad():
        if latent_mode == "prior_sample" and samples > 1:
            draws = torch.stack(
                [_forward_probs(bundle, x, latent_mode, rng)[0] for _ in range(samples)]
            )
            probs = draws.mean(dim=0)
            unc_t = draws.var(dim=0, unbiased=False).sum(dim=0)
            uncertainty = crop_to_shape(unc_t.numpy(), orig_shape)
        else:
            probs = _forward_probs(bundle, x, latent_mode, rng)[0]
            uncertainty = None

    probs_np = np.stack([crop_to_shape(c, orig_shape) for c in probs.numpy()])
    labels = probs_np.argmax(axis=0).astype(np.int64)
    return SegmentationResult(labels=labels, probs=probs_np, uncertainty=uncertainty, samples=samples)


class Predictor:
    """Adapter exposing predict_labels for the metrics evaluator."""

    def __init__(self, bundle):
        self.bundle = bundle
        self.num_classes = bundle.config.segmentor.num_classes
        self._rng = torch.Generator().manual_seed(bundle.config.train.seed)

    def predict_labels(
        self, image: Image, latent_mode: str = "prior_mean", samples: int = 1
    ) -> np.ndarray:
        return segment_image(
            self.bundle, image, latent_mode=latent_mode, samples=samples, rng=self._rng
        ).labels
