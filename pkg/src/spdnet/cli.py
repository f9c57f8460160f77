"""Command-line surface: synth, train, eval, segment, report.

Configuration is layered: built-in defaults, then --preset, then --config
file, then explicit flags. Every command writes its fully resolved config
next to its outputs so runs are reproducible from the snapshot alone.

Exit codes: 0 success, 2 I/O failure, 3 numerical abort, 4 schema or
compatibility error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, resolve_config, write_resolved
from .data.dataset import load_dataset
from .data.nifti import read_nifti
from .data.phantom import write_phantom_dataset
from .data.types import Image
from .errors import (
    CheckpointError,
    ClassCountError,
    ConfigError,
    NumericalAbort,
    SchemaError,
    ShapeError,
    UnlabeledCaseError,
)
from .metrics import (
    aggregate_rows,
    evaluate,
    read_report_csv,
    report_tables,
    write_report,
)
from .predict import Predictor, segment_image
from .trainer import fit, load_models

EXIT_OK = 0
EXIT_IO = 2
EXIT_NUMERIC = 3
EXIT_SCHEMA = 4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--preset", choices=["desk", "paper"], help="named config preset")
    parser.add_argument("--seed", type=int, help="override every seed in the config")


def _overrides_from(args: argparse.Namespace) -> dict:
    ov: dict = {}
    if getattr(args, "seed", None) is not None:
        ov = {
            "train": {"seed": args.seed, "aug": {"seed": args.seed}},
            "data": {"phantom": {"seed": args.seed}},
        }
    for name in getattr(args, "ablate", None) or []:
        ov.setdefault("train", {}).setdefault("ablation", {})[name] = False
    if getattr(args, "epochs", None) is not None:
        ov.setdefault("train", {})["epochs"] = args.epochs
    return ov


def _resolve(args: argparse.Namespace) -> RunConfig:
    return resolve_config(args.config, args.preset, _overrides_from(args))


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out_dir)
    manifest = write_phantom_dataset(
        out_dir, args.count, cfg.data.phantom, cfg.data.train_fraction
    )
    print(f"wrote {args.count} phantom cases; manifest at {manifest}")
    return EXIT_OK


def _load_split(manifest: Path, cfg: RunConfig, split: str):
    if not manifest.exists():
        raise FileNotFoundError(f"manifest not found: {manifest}")
    return load_dataset(manifest, split, num_classes=cfg.data.num_classes)


def _manifest_path(data_arg: str) -> Path:
    p = Path(data_arg)
    return p if p.suffix == ".json" else p / "manifest.json"


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out_dir)
    manifest = _manifest_path(args.data)
    train_ds = _load_split(manifest, cfg, "train")
    val_ds = _load_split(manifest, cfg, "test")
    ckpt, history = fit(train_ds, val_ds, cfg, out_dir, resume_from=args.resume)
    final_val = history.epochs[-1].get("val", {}) if history.epochs else {}
    print(f"checkpoint: {ckpt}")
    if final_val:
        print(f"final val dice: {final_val['dice']:.4f}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    models, _ = load_models(args.checkpoint)
    cfg = models.config
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out_dir)
    ds = _load_split(_manifest_path(args.data), cfg, args.split)
    mode = "prior_sample" if args.samples > 1 else "prior_mean"
    report = evaluate(Predictor(models), ds, latent_mode=mode, samples=args.samples)
    paths = write_report(report, out_dir)
    table, _ = report_tables(report)
    pooled = report.aggregate["pooled"]
    print(table)
    print(
        f"summary: dice {pooled['dice']['mean']:.4f}  "
        f"jaccard {pooled['jaccard']['mean']:.4f}  "
        f"hd_mm {pooled['hausdorff_mm']['mean']:.3f}"
    )
    print(f"report: {paths['csv']}")
    return EXIT_OK


def _load_image(path: Path) -> Image:
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    if path.suffix == ".npz":
        with np.load(path) as z:
            pixels = np.asarray(z["image"], dtype=np.float64)
            spacing = tuple(float(s) for s in z["spacing"]) if "spacing" in z else (1.0, 1.0)
        return Image(pixels, spacing=spacing)
    vol, pixdim = read_nifti(path)
    if vol.ndim == 3:
        vol = vol[:, :, 0]
    spacing = (pixdim[0], pixdim[1]) if len(pixdim) >= 2 else (1.0, 1.0)
    return Image(np.asarray(vol, dtype=np.float64), spacing=spacing)


def cmd_segment(args: argparse.Namespace) -> int:
    models, _ = load_models(args.checkpoint)
    image = _load_image(Path(args.image))
    mode = "prior_sample" if args.samples > 1 else "prior_mean"
    rng = torch.Generator().manual_seed(
        args.seed if args.seed is not None else models.config.train.seed
    )
    result = segment_image(models, image, latent_mode=mode, samples=args.samples, rng=rng)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_resolved(models.config, out_path.parent)
    payload = {"labels": result.labels, "probs": result.probs}
    if result.uncertainty is not None:
        payload["uncertainty"] = result.uncertainty
    np.savez(out_path, **payload)
    print(f"labels: {out_path} (shape {result.labels.shape}, samples {result.samples})")
    return EXIT_OK


def _read_summary(path: Path) -> dict:
    if path.is_dir():
        path = path / "summary.json"
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: not valid JSON ({e})") from e
    missing = [k for k in ("method", "dice", "jaccard", "hd_mm") if k not in doc]
    if missing:
        raise SchemaError(f"{path}: summary missing keys {missing}")
    doc["_dir"] = str(path.parent)
    return doc


def cmd_report(args: argparse.Namespace) -> int:
    summaries = [_read_summary(Path(p)) for p in args.reports]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{'method':<24}{'dice':>10}{'jaccard':>10}{'hd_mm':>10}"]
    for s in summaries:
        lines.append(
            f"{s['method']:<24}{s['dice']:>10.4f}{s['jaccard']:>10.4f}{s['hd_mm']:>10.3f}"
        )
    table = "\n".join(lines)
    print(table)
    (out_dir / "comparison.txt").write_text(table + "\n")
    rows_by_method = {}
    for s in summaries:
        csv_path = Path(s["_dir"]) / "report.csv"
        if csv_path.exists():
            rows_by_method[s["method"]] = read_report_csv(csv_path)
    box_lines = ["method,class_id,metric,q1,median,q3,outliers,n"]
    for method, rows in rows_by_method.items():
        agg = aggregate_rows(rows)
        for cls, stats in agg["per_class"].items():
            for metric, st in stats.items():
                box_lines.append(
                    f"{method},{cls},{metric},{st['q1']:.9f},{st['median']:.9f},"
                    f"{st['q3']:.9f},{st['outliers']},{st['n']}"
                )
    (out_dir / "boxplot.csv").write_text("\n".join(box_lines) + "\n")
    (out_dir / "report.resolved.json").write_text(
        json.dumps({"command": "report", "inputs": [str(p) for p in args.reports]}, indent=2)
        + "\n"
    )
    print(f"comparison: {out_dir / 'comparison.txt'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spdnet", description="Probabilistic adversarial cardiac MRI segmentation"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a phantom dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, default=32, help="number of phantom cases")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a manifest dataset")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset directory or manifest path")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--epochs", type=int, help="override training epochs")
    p.add_argument(
        "--ablate",
        action="append",
        choices=["probabilistic", "discriminator"],
        help="disable a component (repeatable)",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory or manifest path")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--samples", type=int, default=1, help="prior draws per case")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("segment", help="segment a single image")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help=".npz (image key) or NIfTI file")
    p.add_argument("--out", required=True, help="output .npz path")
    p.add_argument("--samples", type=int, default=1, help="prior draws; >1 adds uncertainty map")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("report", help="compare one or more evaluation reports")
    p.add_argument("reports", nargs="+", help="summary.json files or report directories")
    p.add_argument("--out", required=True, help="comparison output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalAbort as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        if e.last_checkpoint:
            print(f"last checkpoint: {e.last_checkpoint}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, SchemaError, ClassCountError, CheckpointError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except (FileNotFoundError, PermissionError, IsADirectoryError, UnlabeledCaseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
