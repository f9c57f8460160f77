"""Run configuration: typed sections, JSON round-trip, presets, validation.

A run config file is a JSON document with the sections
``{data, segmentor, probabilistic, discriminator, losses, train, metrics}``.
Unknown keys are rejected so that typos cannot silently fall back to
defaults. Every command writes its fully-resolved config next to its
outputs, which makes any run reproducible from that snapshot alone.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError


@dataclass
class PhantomConfig:
    image_size: int = 64
    motion_blur_prob: float = 0.5
    motion_blur_extent_px: int = 5
    effusion_prob: float = 0.5
    effusion_intensity_delta: float = 0.03
    num_classes: int = 2
    seed: int = 0


@dataclass
class AugConfig:
    rotation_max_deg: float = 15.0
    flip_x: bool = True
    flip_y: bool = True
    skew_max_deg: float = 8.0
    seed: int = 0


@dataclass
class DataConfig:
    num_classes: int = 2
    train_fraction: float = 0.8
    spacing_mm: tuple[float, float] = (1.0, 1.0)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)


@dataclass
class SegmentorConfig:
    patch_size: int = 2
    stage_channels: tuple[int, ...] = (48, 96, 192, 384)
    stage_depths: tuple[int, ...] = (2, 2, 6, 2)
    window_size: int = 4
    num_classes: int = 2
    latent_channels_per_scale: int = 1
    latent_injection: str = "all"  # "all" | "last"
    mlp_ratio: float = 4.0

    @property
    def num_stages(self) -> int:
        return len(self.stage_channels)

    @property
    def num_heads(self) -> tuple[int, ...]:
        return tuple(max(1, c // 16) for c in self.stage_channels)

    def required_multiple(self) -> int:
        # Guarantees every attention stage sees sides divisible by the window.
        return self.patch_size * 2 ** (self.num_stages - 1) * self.window_size

    def level_side(self, input_side: int, level: int) -> int:
        return input_side // (self.patch_size * 2**level)


@dataclass
class ProbabilisticConfig:
    channels: tuple[int, ...] = (16, 32, 64, 128)
    latent_channels: int = 1


@dataclass
class DiscriminatorConfig:
    num_layers: int = 5
    base_channels: int = 32
    leaky_slope: float = 0.2
    fuse_mode: str = "product"  # "product" | "concat"


@dataclass
class LossConfig:
    alpha: float = 0.6
    beta: float = 10.0


@dataclass
class AblationConfig:
    probabilistic: bool = True
    discriminator: bool = True


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-4
    seed: int = 0
    checkpoint_every: int = 25
    disc_steps_per_seg_step: int = 1
    adv_warmup_steps: int = 0
    augment: bool = True
    ablation: AblationConfig = field(default_factory=AblationConfig)
    aug: AugConfig = field(default_factory=AugConfig)


@dataclass
class MetricsConfig:
    samples: int = 1  # latent draws at evaluation; 1 = deterministic prior mean


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    segmentor: SegmentorConfig = field(default_factory=SegmentorConfig)
    probabilistic: ProbabilisticConfig = field(default_factory=ProbabilisticConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "RunConfig":
        seg, tr = self.segmentor, self.train
        if tr.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {tr.epochs}")
        if tr.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {tr.batch_size}")
        if tr.learning_rate <= 0:
            raise ConfigError("train.learning_rate must be > 0")
        if not 0.0 <= self.losses.alpha <= 1.0:
            raise ConfigError("losses.alpha must lie in [0, 1]")
        if self.losses.beta < 0:
            raise ConfigError("losses.beta must be >= 0")
        if len(seg.stage_channels) != len(seg.stage_depths):
            raise ConfigError("segmentor.stage_channels and stage_depths must have equal length")
        if seg.patch_size < 1 or seg.patch_size & (seg.patch_size - 1):
            raise ConfigError("segmentor.patch_size must be a power of two")
        if seg.latent_injection not in ("all", "last"):
            raise ConfigError("segmentor.latent_injection must be 'all' or 'last'")
        if seg.latent_channels_per_scale != self.probabilistic.latent_channels:
            raise ConfigError(
                "segmentor.latent_channels_per_scale must equal probabilistic.latent_channels"
            )
        if self.discriminator.num_layers < 3:
            raise ConfigError("discriminator.num_layers must be >= 3")
        if self.discriminator.fuse_mode not in ("product", "concat"):
            raise ConfigError("discriminator.fuse_mode must be 'product' or 'concat'")
        if seg.num_classes != self.data.num_classes:
            raise ConfigError("segmentor.num_classes must equal data.num_classes")
        if not 0.0 < self.data.train_fraction <= 1.0:
            raise ConfigError("data.train_fraction must lie in (0, 1]")
        if self.metrics.samples < 1:
            raise ConfigError("metrics.samples must be >= 1")
        for name, p in (("rotation_max_deg", tr.aug.rotation_max_deg),
                        ("skew_max_deg", tr.aug.skew_max_deg)):
            if p < 0:
                raise ConfigError(f"train.aug.{name} must be >= 0")
        ph = self.data.phantom
        if not (0.0 <= ph.motion_blur_prob <= 1.0 and 0.0 <= ph.effusion_prob <= 1.0):
            raise ConfigError("phantom probabilities must lie in [0, 1]")
        return self


_SECTION_TYPES = {
    "data": DataConfig,
    "segmentor": SegmentorConfig,
    "probabilistic": ProbabilisticConfig,
    "discriminator": DiscriminatorConfig,
    "losses": LossConfig,
    "train": TrainConfig,
    "metrics": MetricsConfig,
}


_NESTED_FIELDS: dict[tuple[type, str], type] = {
    (DataConfig, "phantom"): PhantomConfig,
    (TrainConfig, "aug"): AugConfig,
    (TrainConfig, "ablation"): AblationConfig,
}


def _build(cls: type, values: dict, path: str) -> Any:
    if not isinstance(values, dict):
        raise ConfigError(f"{path or cls.__name__}: expected an object, got {type(values).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s) under '{path or '<root>'}': {', '.join(unknown)}")
    kwargs = {}
    for name, raw in values.items():
        sub = path + "." + name if path else name
        nested = _NESTED_FIELDS.get((cls, name))
        if nested is not None:
            kwargs[name] = _build(nested, raw, sub)
        elif isinstance(raw, list):
            kwargs[name] = tuple(raw)
        else:
            kwargs[name] = raw
    return cls(**kwargs)


def config_from_dict(doc: dict) -> RunConfig:
    """Build a RunConfig from a nested dict, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = sorted(set(doc) - set(_SECTION_TYPES))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    cfg = RunConfig()
    for section, cls in _SECTION_TYPES.items():
        if section in doc:
            setattr(cfg, section, _build(cls, doc[section], section))
    return cfg


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


PRESETS: dict[str, dict] = {
    # Paper-scale settings: full channel widths, 100 epochs, lr 1e-4.
    "paper": {
        "data": {"num_classes": 4, "phantom": {"image_size": 256, "num_classes": 4}},
        "segmentor": {
            "patch_size": 2,
            "stage_channels": [48, 96, 192, 384],
            "stage_depths": [2, 2, 6, 2],
            "window_size": 8,
            "num_classes": 4,
        },
        "discriminator": {"num_layers": 5, "base_channels": 32},
        "train": {"epochs": 100, "batch_size": 8, "learning_rate": 1e-4},
    },
    # Desk-scale settings: 64x64 phantoms, slim widths, trains on a CPU in minutes.
    "desk": {
        "data": {"num_classes": 2, "phantom": {"image_size": 64, "num_classes": 2}},
        "segmentor": {
            "patch_size": 2,
            "stage_channels": [24, 48, 96, 192],
            "stage_depths": [1, 1, 2, 1],
            "window_size": 4,
            "num_classes": 2,
        },
        "probabilistic": {"channels": [16, 32, 64, 128]},
        "discriminator": {"num_layers": 4, "base_channels": 16},
        "train": {"epochs": 200, "batch_size": 8, "learning_rate": 1e-3,
                  "checkpoint_every": 50},
    },
}


def resolve_config(
    config_path: str | Path | None = None,
    preset: str | None = None,
    overrides: dict | None = None,
) -> RunConfig:
    """Layer defaults <- preset <- config file <- explicit overrides."""
    doc: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}' (choose from {sorted(PRESETS)})")
        doc = _merge(doc, PRESETS[preset])
    if config_path is not None:
        path = Path(config_path)
        try:
            file_doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from e
        doc = _merge(doc, file_doc)
    if overrides:
        doc = _merge(doc, overrides)
    return config_from_dict(doc).validate()


def write_resolved(cfg: RunConfig, out_dir: str | Path, name: str = "config.resolved.json") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
