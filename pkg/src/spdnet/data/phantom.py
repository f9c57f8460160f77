"""Synthetic cardiac phantoms with the two failure modes the model targets.

Each phantom is a concentric-ellipse heart: a bright myocardial ring around a
darker blood pool, with a crescent of epicardial fat (class 1) hugging the
ring. Two confounders are injected stochastically:

* an "effusion" region adjacent to the fat whose mean intensity differs from
  fat by only ``effusion_intensity_delta`` yet belongs to class 0, and
* a directional motion blur applied to the image only, leaving labels crisp.

Generation is fully determined by the supplied rng.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..config import PhantomConfig
from .types import Image, LabelMap

MIN_IMAGE_SIZE = 32
FAT_FRACTION_BAND = (0.02, 0.15)
_MAX_DRAWS = 64

BACKGROUND_INTENSITY = 0.12
POOL_INTENSITY = 0.45
MYO_INTENSITY = 0.85
FAT_INTENSITY = 0.65
NOISE_SIGMA = 0.01


def _angular_mask(ang: np.ndarray, start: float, span: float) -> np.ndarray:
    rel = np.mod(ang - start, 2.0 * np.pi)
    return rel < span


def _line_kernel(extent: int, angle: float) -> np.ndarray:
    """Normalized extent x extent kernel of ones along a line through the center."""
    k = np.zeros((extent, extent), dtype=np.float64)
    c = (extent - 1) / 2.0
    ts = np.linspace(-c, c, 4 * extent)
    rows = np.clip(np.rint(c + ts * np.sin(angle)).astype(int), 0, extent - 1)
    cols = np.clip(np.rint(c + ts * np.cos(angle)).astype(int), 0, extent - 1)
    k[rows, cols] = 1.0
    return k / k.sum()


def generate_phantom_with_meta(
    cfg: PhantomConfig, rng: np.random.Generator
) -> tuple[Image, LabelMap, dict]:
    """generate_phantom plus a meta dict of region masks and draw outcomes."""
    if cfg.image_size < MIN_IMAGE_SIZE:
        raise ValueError(
            f"image_size {cfg.image_size} too small to contain phantom structures "
            f"(need >= {MIN_IMAGE_SIZE})"
        )
    n = cfg.image_size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)

    for _ in range(_MAX_DRAWS):
        cy = n / 2.0 + rng.uniform(-0.04, 0.04) * n
        cx = n / 2.0 + rng.uniform(-0.04, 0.04) * n
        a = rng.uniform(0.26, 0.34) * n
        b = rng.uniform(0.26, 0.34) * n
        tilt = rng.uniform(0.0, np.pi)
        fat_width = rng.uniform(0.18, 0.30)
        fat_start = rng.uniform(0.0, 2.0 * np.pi)
        fat_span = rng.uniform(np.pi / 3.0, 2.0 * np.pi / 3.0)
        eff_span = rng.uniform(np.pi / 4.0, np.pi / 2.0)
        blur_draw = rng.uniform()
        blur_angle = rng.uniform(0.0, np.pi)
        eff_draw = rng.uniform()

        ct, st = np.cos(tilt), np.sin(tilt)
        u = (xx - cx) * ct + (yy - cy) * st
        v = -(xx - cx) * st + (yy - cy) * ct
        rho = np.sqrt((u / a) ** 2 + (v / b) ** 2)
        ang = np.arctan2(v, u)

        pool = rho < 0.62
        myo = (rho >= 0.62) & (rho < 1.0)
        band = (rho >= 1.0) & (rho < 1.0 + fat_width)
        fat = band & _angular_mask(ang, fat_start, fat_span)
        has_effusion = eff_draw < cfg.effusion_prob
        effusion = (
            band & _angular_mask(ang, fat_start + fat_span, eff_span)
            if has_effusion
            else np.zeros_like(fat)
        )

        frac = fat.mean()
        if FAT_FRACTION_BAND[0] <= frac <= FAT_FRACTION_BAND[1]:
            break
    else:
        raise ValueError("could not place a fat crescent within the target area band")

    img = np.full((n, n), BACKGROUND_INTENSITY, dtype=np.float64)
    img[pool] = POOL_INTENSITY
    img[myo] = MYO_INTENSITY
    img[fat] = FAT_INTENSITY
    img[effusion] = FAT_INTENSITY - cfg.effusion_intensity_delta
    img += rng.normal(0.0, NOISE_SIGMA, size=img.shape)

    blurred = blur_draw < cfg.motion_blur_prob
    if blurred:
        kernel = _line_kernel(cfg.motion_blur_extent_px, blur_angle)
        img = ndimage.convolve(img, kernel, mode="nearest")
    img = np.clip(img, 0.0, 1.0)

    labels = np.zeros((n, n), dtype=np.int64)
    if cfg.num_classes >= 3:
        labels[myo] = 2
    if cfg.num_classes >= 4:
        labels[pool] = 3
    labels[fat] = 1

    meta = {
        "pool_mask": pool,
        "myo_mask": myo,
        "fat_mask": fat,
        "effusion_mask": effusion,
        "has_effusion": bool(has_effusion),
        "motion_blur": bool(blurred),
        "blur_angle_rad": float(blur_angle) if blurred else None,
        "fat_fraction": float(frac),
    }
    spacing = (1.0, 1.0)
    return (
        Image(img, spacing=spacing),
        LabelMap(labels, num_classes=cfg.num_classes, spacing=spacing),
        meta,
    )


def generate_phantom(cfg: PhantomConfig, rng: np.random.Generator) -> tuple[Image, LabelMap]:
    """Generate one phantom (Image, LabelMap) pair, deterministic given rng state."""
    img, lbl, _ = generate_phantom_with_meta(cfg, rng)
    return img, lbl


def save_phantom_case(
    out_dir: str | Path,
    case_id: str,
    img: Image,
    lbl: LabelMap,
    meta: dict,
    seed: int,
) -> tuple[Path, Path]:
    """Write one case as an .npz pair plus a JSON sidecar; returns (npz, sidecar) paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    npz_path = out_dir / f"{case_id}.npz"
    np.savez(
        npz_path,
        image=img.pixels,
        label=lbl.labels,
        spacing=np.asarray(img.spacing, dtype=np.float64),
        num_classes=np.int64(lbl.num_classes),
    )
    sidecar = {
        "case_id": case_id,
        "seed": seed,
        "motion_blur": meta["motion_blur"],
        "effusion": meta["has_effusion"],
        "fat_fraction": meta["fat_fraction"],
    }
    sidecar_path = out_dir / f"{case_id}.json"
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return npz_path, sidecar_path


def write_phantom_dataset(
    out_dir: str | Path,
    num_cases: int,
    cfg: PhantomConfig,
    train_fraction: float = 0.8,
) -> Path:
    """Generate a corpus of phantoms and a split manifest; returns the manifest path."""
    from .dataset import assign_splits, write_manifest

    out_dir = Path(out_dir)
    entries = []
    for i in range(num_cases):
        rng = np.random.default_rng([cfg.seed, i])
        img, lbl, meta = generate_phantom_with_meta(cfg, rng)
        case_id = f"phantom_{i:04d}"
        npz_path, _ = save_phantom_case(out_dir, case_id, img, lbl, meta, seed=cfg.seed)
        entries.append(
            {
                "case_id": case_id,
                "image_path": str(npz_path),
                "label_path": str(npz_path),
            }
        )
    entries = assign_splits(entries, train_fraction=train_fraction, seed=cfg.seed)
    return write_manifest(entries, out_dir / "manifest.json")
