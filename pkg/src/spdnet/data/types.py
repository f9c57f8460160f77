"""Core array-carrying types for 2-D short-axis slices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError


@dataclass
class Image:
    """A 2-D intensity grid with physical pixel spacing in millimetres."""

    pixels: np.ndarray  # (H, W) float
    spacing: tuple[float, float] = (1.0, 1.0)  # (row_mm, col_mm)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ShapeError(f"Image.pixels must be 2-D, got shape {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("Image.pixels must be finite")
        self.spacing = (float(self.spacing[0]), float(self.spacing[1]))

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass
class LabelMap:
    """A 2-D grid of integer class ids in {0..num_classes-1}."""

    labels: np.ndarray  # (H, W) int
    num_classes: int
    spacing: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 2:
            raise ShapeError(f"LabelMap.labels must be 2-D, got shape {self.labels.shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(
                f"label values must lie in [0, {self.num_classes}), "
                f"got range [{self.labels.min()}, {self.labels.max()}]"
            )
        self.spacing = (float(self.spacing[0]), float(self.spacing[1]))

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass
class Case:
    image: Image
    label: LabelMap
    case_id: str


@dataclass
class Dataset:
    """An ordered collection of labelled slices sharing one class count."""

    cases: list[Case] = field(default_factory=list)
    split_tag: str = "train"

    def __post_init__(self):
        ids = [c.case_id for c in self.cases]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate case ids: {dupes}")
        counts = {c.label.num_classes for c in self.cases}
        if len(counts) > 1:
            raise ValueError(f"cases disagree on num_classes: {sorted(counts)}")

    def __len__(self) -> int:
        return len(self.cases)

    def __iter__(self):
        return iter(self.cases)

    @property
    def num_classes(self) -> int:
        if not self.cases:
            raise ValueError("empty dataset has no class count")
        return self.cases[0].label.num_classes


@dataclass
class Batch:
    """Shape-unified stack of cases ready for a training step."""

    images: np.ndarray  # (B, H, W) float32
    labels: np.ndarray  # (B, H, W) int64
    case_ids: list[str]
    spacing: tuple[float, float]

    def __len__(self) -> int:
        return self.images.shape[0]
