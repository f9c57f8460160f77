"""Segmentation metrics, per-case reports, and box-plot statistics.

Dice and Jaccard are set-overlap scores on binarized class masks with the
both-empty case scored 1.0 (perfect agreement on absence). Hausdorff distance
is the full symmetric Hausdorff between boundary pixels (4-connectivity
erosion difference), Euclidean in physical millimeters; if exactly one mask
is empty the image diagonal in mm is recorded as a sentinel. Quartiles use
numpy's linear-interpolation percentiles; outliers are points beyond 1.5 IQR
from the quartiles.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .data.types import Dataset, LabelMap
from .errors import ClassCountError

QUANTILE_NOTE = "quartiles: numpy linear-interpolation percentiles (25/50/75)"
_STRUCT4 = ndimage.generate_binary_structure(2, 1)


def _mask(labels, cls: int) -> np.ndarray:
    arr = labels.labels if isinstance(labels, LabelMap) else np.asarray(labels)
    return arr == cls


def dice_score(pred, truth, cls: int) -> float:
    """2|A&B| / (|A|+|B|); both masks empty -> 1.0."""
    a, b = _mask(pred, cls), _mask(truth, cls)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def jaccard(pred, truth, cls: int) -> float:
    """Intersection over union; both masks empty -> 1.0."""
    a, b = _mask(pred, cls), _mask(truth, cls)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return int((a & b).sum()) / union


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with a 4-neighbor outside the mask (image border counts)."""
    if not mask.any():
        return np.zeros_like(mask, dtype=bool)
    eroded = ndimage.binary_erosion(mask, structure=_STRUCT4, border_value=0)
    return mask & ~eroded


def hausdorff(pred, truth, cls: int, spacing: tuple[float, float] = (1.0, 1.0)) -> float:
    """Symmetric Hausdorff distance between class boundaries, in mm.

    Both masks empty -> 0.0; exactly one empty -> image-diagonal sentinel.
    """
    a, b = _mask(pred, cls), _mask(truth, cls)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    sr, sc = float(spacing[0]), float(spacing[1])
    if not a.any() and not b.any():
        return 0.0
    if not a.any() or not b.any():
        h, w = a.shape
        return float(np.hypot(h * sr, w * sc))
    pa = np.argwhere(boundary_pixels(a)).astype(np.float64) * [sr, sc]
    pb = np.argwhere(boundary_pixels(b)).astype(np.float64) * [sr, sc]
    d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
    forward = np.sqrt(d2.min(axis=1)).max()
    backward = np.sqrt(d2.min(axis=0)).max()
    return float(max(forward, backward))


def _stats(values: list[float]) -> dict:
    v = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.percentile(v, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    outliers = int(((v < q1 - 1.5 * iqr) | (v > q3 + 1.5 * iqr)).sum())
    return {
        "mean": float(v.mean()),
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "outliers": outliers,
        "n": int(v.size),
    }


@dataclass
class MetricsReport:
    """Per-(case, class) metric rows plus pooled and per-class aggregates."""

    per_case: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"per_case": self.per_case, "aggregate": self.aggregate}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(per_case=list(d["per_case"]), aggregate=dict(d["aggregate"]))


def aggregate_rows(rows: list[dict]) -> dict:
    """Build pooled, per-class, and class-then-case aggregates from rows."""
    metrics = ("dice", "jaccard", "hausdorff_mm")
    agg: dict = {"pooled": {}, "per_class": {}, "class_then_case": {}}
    for m in metrics:
        agg["pooled"][m] = _stats([r[m] for r in rows])
    for cls in sorted({r["class_id"] for r in rows}):
        agg["per_class"][str(cls)] = {
            m: _stats([r[m] for r in rows if r["class_id"] == cls]) for m in metrics
        }
    by_case: dict[str, list[dict]] = {}
    for r in rows:
        by_case.setdefault(r["case_id"], []).append(r)
    case_means = {
        m: [float(np.mean([r[m] for r in rs])) for rs in by_case.values()] for m in metrics
    }
    for m in metrics:
        agg["class_then_case"][m] = _stats(case_means[m])
    return agg


def evaluate(model, ds: Dataset, latent_mode: str = "prior_mean", samples: int = 1) -> MetricsReport:
    """Segment every case and score each foreground class.

    model is either a callable Image -> int label array or an object exposing
    predict_labels(image, latent_mode=..., samples=...).
    """
    if len(ds) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    num_classes = ds.num_classes
    model_classes = getattr(model, "num_classes", None)
    if model_classes is not None and model_classes != num_classes:
        raise ClassCountError(
            f"model has {model_classes} classes but dataset has {num_classes}"
        )
    rows = []
    for case in ds:
        if hasattr(model, "predict_labels"):
            pred = model.predict_labels(case.image, latent_mode=latent_mode, samples=samples)
        else:
            pred = model(case.image)
        pred = np.asarray(pred)
        if pred.shape != case.label.labels.shape:
            raise ValueError(
                f"{case.case_id}: prediction shape {pred.shape} != "
                f"label shape {case.label.labels.shape}"
            )
        for cls in range(1, num_classes):
            rows.append(
                {
                    "case_id": case.case_id,
                    "class_id": cls,
                    "dice": dice_score(pred, case.label, cls),
                    "jaccard": jaccard(pred, case.label, cls),
                    "hausdorff_mm": hausdorff(pred, case.label, cls, case.label.spacing),
                }
            )
    return MetricsReport(per_case=rows, aggregate=aggregate_rows(rows))


def report_tables(report: MetricsReport) -> tuple[str, str]:
    """Render (summary table text, per-case CSV text with quartile header)."""
    if not report.per_case:
        raise ValueError("empty report")
    lines = [f"{'group':<18}{'dice':>10}{'jaccard':>10}{'hd_mm':>10}{'n':>6}"]

    def row(name: str, stats: dict) -> str:
        return (
            f"{name:<18}"
            f"{stats['dice']['mean']:>10.4f}"
            f"{stats['jaccard']['mean']:>10.4f}"
            f"{stats['hausdorff_mm']['mean']:>10.3f}"
            f"{stats['dice']['n']:>6d}"
        )

    lines.append(row("pooled", report.aggregate["pooled"]))
    for cls, stats in report.aggregate["per_class"].items():
        lines.append(row(f"class {cls}", stats))
    lines.append(row("class_then_case", report.aggregate["class_then_case"]))
    table = "\n".join(lines)

    buf = io.StringIO()
    buf.write(f"# {QUANTILE_NOTE}\n")
    writer = csv.writer(buf)
    writer.writerow(["case_id", "class_id", "dice", "jaccard", "hd_mm"])
    for r in report.per_case:
        writer.writerow(
            [r["case_id"], r["class_id"], f"{r['dice']:.9f}", f"{r['jaccard']:.9f}", f"{r['hausdorff_mm']:.9f}"]
        )
    return table, buf.getvalue()


def boxplot_csv(report: MetricsReport) -> str:
    """Per-class quartile/whisker rows for box-plot rendering."""
    buf = io.StringIO()
    buf.write(f"# {QUANTILE_NOTE}; whiskers at 1.5 IQR\n")
    writer = csv.writer(buf)
    writer.writerow(["class_id", "metric", "q1", "median", "q3", "outliers", "n"])
    for cls, stats in report.aggregate["per_class"].items():
        for m, s in stats.items():
            writer.writerow(
                [cls, m, f"{s['q1']:.9f}", f"{s['median']:.9f}", f"{s['q3']:.9f}", s["outliers"], s["n"]]
            )
    return buf.getvalue()


def read_report_csv(path: str | Path) -> list[dict]:
    """Load a per-case CSV written by write_report (comment lines skipped)."""
    rows = []
    with open(path, newline="") as fh:
        data = [ln for ln in fh if not ln.startswith("#")]
    for rec in csv.DictReader(data):
        rows.append(
            {
                "case_id": rec["case_id"],
                "class_id": int(rec["class_id"]),
                "dice": float(rec["dice"]),
                "jaccard": float(rec["jaccard"]),
                "hausdorff_mm": float(rec["hd_mm"]),
            }
        )
    return rows


def write_report(report: MetricsReport, out_dir: str | Path, method: str = "spdnet") -> dict[str, Path]:
    """Write report.csv, boxplot.csv, and summary.json; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table, csv_text = report_tables(report)
    paths = {
        "csv": out_dir / "report.csv",
        "boxplot": out_dir / "boxplot.csv",
        "summary": out_dir / "summary.json",
        "table": out_dir / "report.txt",
    }
    paths["csv"].write_text(csv_text)
    paths["boxplot"].write_text(boxplot_csv(report))
    pooled = report.aggregate["pooled"]
    summary = {
        "method": method,
        "dice": pooled["dice"]["mean"],
        "jaccard": pooled["jaccard"]["mean"],
        "hd_mm": pooled["hausdorff_mm"]["mean"],
        "aggregate": report.aggregate,
        "quantile_convention": QUANTILE_NOTE,
    }
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    paths["table"].write_text(table + "\n")
    return paths
