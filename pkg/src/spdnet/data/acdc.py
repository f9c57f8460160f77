"""Loader for the ACDC cardiac MRI challenge directory layout.

A case directory holds annotated end-diastole/end-systole frames as
``patientXXX_frameYY.nii.gz`` with matching ``patientXXX_frameYY_gt.nii.gz``
label volumes (plus a 4-D cine volume and an Info.cfg, both ignored here).
Volumes are split into 2-D short-axis slices; in-plane spacing comes from
the header. Labels: 0 background, 1 right ventricle, 2 myocardium,
3 left ventricle.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ShapeError, UnlabeledCaseError
from .nifti import read_nifti
from .types import Case, Image, LabelMap

NUM_CLASSES = 4
LABEL_NAMES = {0: "background", 1: "RV", 2: "Myo", 3: "LV"}


def _frame_volumes(case_dir: Path) -> list[tuple[Path, Path]]:
    frames = []
    for img_path in sorted(case_dir.glob("*_frame*.nii*")):
        stem = img_path.name
        if "_gt" in stem or "_4d" in stem:
            continue
        suffix = ".nii.gz" if stem.endswith(".nii.gz") else ".nii"
        gt_name = stem[: -len(suffix)] + "_gt" + suffix
        frames.append((img_path, case_dir / gt_name))
    return frames


def load_acdc_case(path: str | Path) -> list[tuple[Image, LabelMap]]:
    """Load every annotated slice of one case directory as (Image, LabelMap) pairs."""
    case_dir = Path(path)
    if not case_dir.is_dir():
        raise FileNotFoundError(f"case directory not found: {case_dir}")
    frames = _frame_volumes(case_dir)
    if not frames:
        raise UnlabeledCaseError(f"{case_dir}: no annotated frame volumes found")

    pairs: list[tuple[Image, LabelMap]] = []
    for img_path, gt_path in frames:
        if not gt_path.exists():
            raise UnlabeledCaseError(f"{case_dir}: missing ground truth {gt_path.name}")
        vol, spacing = read_nifti(img_path)
        gt, _ = read_nifti(gt_path)
        if vol.shape != gt.shape:
            raise ShapeError(
                f"{img_path.name}: image shape {vol.shape} != label shape {gt.shape}"
            )
        if vol.ndim == 2:
            vol = vol[..., np.newaxis]
            gt = gt[..., np.newaxis]
        if vol.ndim != 3:
            raise ShapeError(f"{img_path.name}: expected a 3-D short-axis volume, got {vol.shape}")
        inplane = (spacing[0], spacing[1]) if len(spacing) >= 2 else (1.0, 1.0)
        gt = np.rint(np.asarray(gt)).astype(np.int64)
        if gt.min() < 0 or gt.max() >= NUM_CLASSES:
            raise ValueError(f"{gt_path.name}: label values outside 0..{NUM_CLASSES - 1}")
        for s in range(vol.shape[2]):
            pairs.append(
                (
                    Image(vol[:, :, s].astype(np.float64), spacing=inplane),
                    LabelMap(gt[:, :, s], num_classes=NUM_CLASSES, spacing=inplane),
                )
            )
    return pairs


def load_acdc_cases(path: str | Path) -> list[Case]:
    """Like load_acdc_case but with per-slice case ids derived from file names."""
    case_dir = Path(path)
    cases: list[Case] = []
    for img_path, gt_path in _frame_volumes(case_dir) or [(None, None)]:
        if img_path is None:
            raise UnlabeledCaseError(f"{case_dir}: no annotated frame volumes found")
        if not gt_path.exists():
            raise UnlabeledCaseError(f"{case_dir}: missing ground truth {gt_path.name}")
        stem = img_path.name.split(".nii")[0]
        sub = load_acdc_case_single(img_path, gt_path)
        for s, (img, lbl) in enumerate(sub):
            cases.append(Case(img, lbl, f"{stem}_s{s:02d}"))
    return cases


def load_acdc_case_single(img_path: Path, gt_path: Path) -> list[tuple[Image, LabelMap]]:
    vol, spacing = read_nifti(img_path)
    gt, _ = read_nifti(gt_path)
    if vol.shape != gt.shape:
        raise ShapeError(f"{img_path.name}: image shape {vol.shape} != label shape {gt.shape}")
    if vol.ndim == 2:
        vol = vol[..., np.newaxis]
        gt = gt[..., np.newaxis]
    inplane = (spacing[0], spacing[1]) if len(spacing) >= 2 else (1.0, 1.0)
    gt = np.rint(np.asarray(gt)).astype(np.int64)
    return [
        (
            Image(vol[:, :, s].astype(np.float64), spacing=inplane),
            LabelMap(gt[:, :, s], num_classes=NUM_CLASSES, spacing=inplane),
        )
        for s in range(vol.shape[2])
    ]


def write_acdc_manifest(root: str | Path, out_path: str | Path, train_fraction: float = 0.8) -> Path:
    """Scan an ACDC-style root of patient directories into a slice manifest."""
    root = Path(root)
    patient_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    entries = []
    n_train = round(len(patient_dirs) * train_fraction)
    for i, pdir in enumerate(patient_dirs):
        split = "train" if i < n_train else "test"
        for img_path, gt_path in _frame_volumes(pdir):
            if not gt_path.exists():
                raise UnlabeledCaseError(f"{pdir}: missing ground truth {gt_path.name}")
            vol, _ = read_nifti(img_path)
            n_slices = vol.shape[2] if vol.ndim == 3 else 1
            stem = img_path.name.split(".nii")[0]
            for s in range(n_slices):
                entries.append(
                    {
                        "case_id": f"{stem}_s{s:02d}",
                        "image_path": str(img_path),
                        "label_path": str(gt_path),
                        "split": split,
                        "slice": s,
                    }
                )
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(entries, indent=2) + "\n")
    return out_path
