"""Manifest-driven dataset loading, split assignment, and batching.

A manifest is a JSON list of {case_id, image_path, label_path, split} entries
(plus an optional "slice" index for 3-D volumes). Splits are assigned by
ranking salted case-id hashes, which makes the assignment deterministic in the
seed, independent of listing order, and exact in the requested fraction up to
rounding.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import SchemaError
from .nifti import read_nifti
from .transforms import normalize, pad_to_square_multiple
from .types import Batch, Case, Dataset, Image, LabelMap

_REQUIRED_KEYS = ("case_id", "image_path", "label_path", "split")


def assign_splits(entries: list[dict], train_fraction: float, seed: int) -> list[dict]:
    """Assign 'train'/'test' split tags; round(train_fraction * N) cases train."""
    if not 0.0 <= train_fraction <= 1.0:
        raise ValueError(f"train_fraction must be in [0, 1], got {train_fraction}")
    ids = [e["case_id"] for e in entries]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate case_ids in manifest entries")

    def rank(case_id: str) -> str:
        return hashlib.sha1(f"{seed}:{case_id}".encode()).hexdigest()

    ordered = sorted(ids, key=rank)
    n_train = round(train_fraction * len(ids))
    train_ids = set(ordered[:n_train])
    return [
        {**e, "split": "train" if e["case_id"] in train_ids else "test"} for e in entries
    ]


def write_manifest(entries: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(entries, indent=2) + "\n")
    return path


def read_manifest(path: str | Path) -> list[dict]:
    path = Path(path)
    try:
        entries = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(entries, list):
        raise SchemaError(f"{path}: manifest must be a JSON list")
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise SchemaError(f"{path}: entry {i} is not an object")
        missing = [k for k in _REQUIRED_KEYS if k not in entry]
        if missing:
            raise SchemaError(f"{path}: entry {i} missing keys {missing}")
        if entry["split"] not in ("train", "test"):
            raise SchemaError(f"{path}: entry {i} has unknown split {entry['split']!r}")
    return entries


def _load_entry(entry: dict, num_classes: int | None) -> Case:
    img_path = Path(entry["image_path"])
    lbl_path = Path(entry["label_path"])
    if img_path.suffix == ".npz":
        with np.load(img_path) as z:
            pixels = np.asarray(z["image"], dtype=np.float64)
            labels = np.asarray(z["label"], dtype=np.int64)
            spacing = tuple(float(s) for s in z["spacing"])
            stored_classes = int(z["num_classes"]) if "num_classes" in z else None
        ncls = num_classes or stored_classes
    else:
        vol, pixdim = read_nifti(img_path)
        gt, _ = read_nifti(lbl_path)
        s = int(entry.get("slice", 0))
        if vol.ndim == 3:
            vol, gt = vol[:, :, s], gt[:, :, s]
        pixels = np.asarray(vol, dtype=np.float64)
        labels = np.rint(np.asarray(gt)).astype(np.int64)
        spacing = (pixdim[0], pixdim[1]) if len(pixdim) >= 2 else (1.0, 1.0)
        ncls = num_classes
    if ncls is None:
        ncls = max(2, int(labels.max()) + 1)
    return Case(
        Image(pixels, spacing=spacing),
        LabelMap(labels, num_classes=ncls, spacing=spacing),
        entry["case_id"],
    )


def load_dataset(
    manifest_path: str | Path,
    split: str,
    num_classes: int | None = None,
    apply_normalize: bool = True,
) -> Dataset:
    """Load every manifest case tagged with the given split."""
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    entries = read_manifest(manifest_path)
    cases = []
    for entry in entries:
        if entry["split"] != split:
            continue
        case = _load_entry(entry, num_classes)
        if apply_normalize:
            case = Case(normalize(case.image), case.label, case.case_id)
        cases.append(case)
    return Dataset(cases, split_tag=split)


def make_batches(
    ds: Dataset, batch_size: int, shuffle_seed: int, pad_multiple: int = 1
) -> list[Batch]:
    """Partition the dataset into seeded-permutation batches of unified shape."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if len(ds) == 0:
        raise ValueError("cannot batch an empty dataset")
    order = np.random.default_rng(shuffle_seed).permutation(len(ds))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [ds.cases[i] for i in order[start : start + batch_size]]
        side = max(max(c.image.pixels.shape) for c in chunk)
        side = int(np.ceil(side / pad_multiple)) * pad_multiple
        images = np.stack(
            [
                pad_to_square_multiple(c.image.pixels, side).astype(np.float32)
                for c in chunk
            ]
        )
        labels = np.stack(
            [pad_to_square_multiple(c.label.labels, side) for c in chunk]
        )
        batches.append(
            Batch(
                images=images,
                labels=labels.astype(np.int64),
                case_ids=tuple(c.case_id for c in chunk),
                spacing=chunk[0].image.spacing,
            )
        )
    return batches
