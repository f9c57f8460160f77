"""Intensity normalization, shape padding, and geometric augmentation.

The geometric core is a single affine warp shared by image and label so the
pair stays aligned: images are resampled bilinearly, labels nearest-neighbor,
and out-of-frame samples fill with background. All coordinates are (row, col)
about the image center ((H-1)/2, (W-1)/2); rotation is counterclockwise.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..config import AugConfig
from .types import Image, LabelMap


def normalize(img: Image) -> Image:
    """Min-max scale intensities to [0, 1]; constant images map to all zeros."""
    px = img.pixels
    lo = float(px.min())
    hi = float(px.max())
    if hi == lo:
        return Image(np.zeros_like(px), spacing=img.spacing)
    return Image((px - lo) / (hi - lo), spacing=img.spacing)


def pad_to_square_multiple(arr: np.ndarray, multiple: int, cval: float = 0.0) -> np.ndarray:
    """Zero-pad bottom/right to a square whose side is the next multiple."""
    h, w = arr.shape
    side = int(np.ceil(max(h, w) / multiple)) * multiple
    if (h, w) == (side, side):
        return arr
    out = np.full((side, side), cval, dtype=arr.dtype)
    out[:h, :w] = arr
    return out


def crop_to_shape(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Undo pad_to_square_multiple: take the top-left (h, w) window."""
    return arr[: shape[0], : shape[1]]


def _forward_matrix(
    angle_deg: float, skew_deg: float, flip_x: bool, flip_y: bool
) -> np.ndarray:
    theta = np.deg2rad(angle_deg)
    shear = np.tan(np.deg2rad(skew_deg))
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    skw = np.array([[1.0, shear], [0.0, 1.0]])
    flp = np.diag([-1.0 if flip_y else 1.0, -1.0 if flip_x else 1.0])
    return rot @ skw @ flp


def warp_pair(
    img_px: np.ndarray,
    lbl_px: np.ndarray,
    angle_deg: float,
    skew_deg: float,
    flip_x: bool,
    flip_y: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply one affine transform to both arrays about the shared center.

    Forward map: out = R(angle) @ Shear(skew) @ Flip @ (in - center) + center,
    with flip_x mirroring columns and flip_y mirroring rows.
    """
    if angle_deg == 0.0 and skew_deg == 0.0 and not flip_x and not flip_y:
        return img_px.copy(), lbl_px.copy()
    fwd = _forward_matrix(angle_deg, skew_deg, flip_x, flip_y)
    inv = np.linalg.inv(fwd)
    center = (np.asarray(img_px.shape, dtype=np.float64) - 1.0) / 2.0
    offset = center - inv @ center
    img_out = ndimage.affine_transform(
        img_px.astype(np.float64), inv, offset=offset, order=1, mode="constant", cval=0.0
    )
    lbl_out = ndimage.affine_transform(
        lbl_px, inv, offset=offset, order=0, mode="constant", cval=0
    )
    return img_out, lbl_out


def augment(
    img: Image, lbl: LabelMap, cfg: AugConfig, rng: np.random.Generator
) -> tuple[Image, LabelMap]:
    """Draw one random geometric transform and apply it identically to both."""
    if img.pixels.shape != lbl.labels.shape:
        raise ValueError(
            f"image shape {img.pixels.shape} != label shape {lbl.labels.shape}"
        )
    angle = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg)
    skew = rng.uniform(-cfg.skew_max_deg, cfg.skew_max_deg)
    fx = cfg.flip_x and rng.uniform() < 0.5
    fy = cfg.flip_y and rng.uniform() < 0.5
    img_out, lbl_out = warp_pair(img.pixels, lbl.labels, angle, skew, fx, fy)
    return (
        Image(img_out, spacing=img.spacing),
        LabelMap(lbl_out.astype(np.int64), num_classes=lbl.num_classes, spacing=lbl.spacing),
    )
