"""Alternating minimax training with ablations, checkpoints, and determinism.

Each batch takes one discriminator ascent step on the multi-scale feature
loss (fake branch detached), then one segmentor/probabilistic descent step on
msl + elbo with the discriminator frozen in eval mode. Ablation switches
remove the probabilistic nets (zero latents, no KL) or the discriminator
(msl omitted) from the graph entirely.

Reproducibility: weights are initialized under torch.manual_seed(seed);
batch order and augmentation draws are stateless functions of (seed, epoch,
case index); posterior/prior sampling uses one torch.Generator whose state is
checkpointed, so resuming from a checkpoint replays the identical trace.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .adversarial import DiscriminatorNet, fuse, multiscale_loss
from .checkpoint import CheckpointData, load_checkpoint, save_checkpoint
from .config import RunConfig, config_from_dict
from .data.dataset import make_batches
from .data.transforms import augment
from .data.types import Batch, Case, Dataset
from .errors import ClassCountError, MissingComponentError, NumericalAbort
from .losses import elbo_loss, one_hot, rec_loss, total_objective
from .metrics import MetricsReport, evaluate
from .predict import Predictor, zero_latent_grids
from .probabilistic import PosteriorNet, PriorNet, hierarchy_kl
from .segmentor import SegmentorNet


@dataclass
class RunHistory:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)


@dataclass
class ModelBundle:
    """All nets plus their optimizers and the sampling generator."""

    config: RunConfig
    segmentor: SegmentorNet
    prior: PriorNet | None
    posterior: PosteriorNet | None
    discriminator: DiscriminatorNet | None
    opt_seg: torch.optim.Adam
    opt_disc: torch.optim.Adam | None
    sample_gen: torch.Generator

    def component_parameters(self) -> dict[str, int]:
        """Trainable parameter counts per component (absent components -> 0)."""
        count = lambda m: sum(p.numel() for p in m.parameters()) if m else 0
        return {
            "segmentor": count(self.segmentor),
            "prior": count(self.prior),
            "posterior": count(self.posterior),
            "discriminator": count(self.discriminator),
        }


def _prob_num_downs(cfg: RunConfig) -> int:
    seg = cfg.segmentor
    return int(math.log2(seg.patch_size)) + seg.num_stages - 1


def build_models(cfg: RunConfig) -> ModelBundle:
    """Construct all enabled components under the run seed."""
    cfg.validate()
    torch.manual_seed(cfg.train.seed)
    seg = SegmentorNet(cfg.segmentor)
    num_scales = cfg.segmentor.num_stages
    downs = _prob_num_downs(cfg)
    prior = posterior = disc = opt_disc = None
    if cfg.train.ablation.probabilistic:
        prior = PriorNet(cfg.probabilistic, num_scales, downs)
        posterior = PosteriorNet(
            cfg.probabilistic, num_scales, downs, cfg.segmentor.num_classes
        )
    if cfg.train.ablation.discriminator:
        in_ch = cfg.segmentor.num_classes
        if cfg.discriminator.fuse_mode == "concat":
            in_ch += 1
        disc = DiscriminatorNet(in_ch, cfg.discriminator)
        opt_disc = torch.optim.Adam(disc.parameters(), lr=cfg.train.learning_rate)
    seg_params = list(seg.parameters())
    if prior is not None:
        seg_params += list(prior.parameters()) + list(posterior.parameters())
    opt_seg = torch.optim.Adam(seg_params, lr=cfg.train.learning_rate)
    gen = torch.Generator().manual_seed(cfg.train.seed)
    return ModelBundle(cfg, seg, prior, posterior, disc, opt_seg, opt_disc, gen)


def _batch_tensors(batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.from_numpy(batch.images).unsqueeze(1).float()
    y = torch.from_numpy(batch.labels).long()
    return x, y


def _draw_latents(models: ModelBundle, x, y, use_grad: bool):
    """Posterior samples (training path) or zero latents when ablated."""
    if models.posterior is None:
        return zero_latent_grids(models, x.shape[0], x.shape[-1]), None
    ctx = torch.enable_grad() if use_grad else torch.no_grad()
    with ctx:
        qh = models.posterior(x, y, rng=models.sample_gen)
    return qh.samples, qh


def train_step_discriminator(models: ModelBundle, batch: Batch) -> float:
    """One ascent step on msl; segmentor and probabilistic nets stay fixed."""
    disc = models.discriminator
    if disc is None:
        raise ValueError("discriminator is ablated; no discriminator step to take")
    x, y = _batch_tensors(batch)
    mode = models.config.discriminator.fuse_mode
    with torch.no_grad():
        z, _ = _draw_latents(models, x, y, use_grad=False)
        fake_probs = models.segmentor(x, z)
    y1 = one_hot(y, models.config.segmentor.num_classes)
    disc.train()
    real_feats = disc.features(fuse(x, y1, mode))
    fake_feats = disc.features(fuse(x, fake_probs, mode))
    msl = multiscale_loss(real_feats, fake_feats)
    if not math.isfinite(float(msl.detach())):
        raise NumericalAbort(f"non-finite discriminator loss: {float(msl.detach())}")
    models.opt_disc.zero_grad()
    (-msl).backward()
    models.opt_disc.step()
    return float(msl.detach())


def train_step_segmentor(models: ModelBundle, batch: Batch) -> dict:
    """One descent step on msl + elbo with the discriminator frozen."""
    cfg = models.config
    x, y = _batch_tensors(batch)
    y1 = one_hot(y, cfg.segmentor.num_classes)

    if models.posterior is not None:
        qh = models.posterior(x, y, rng=models.sample_gen)
        ph = models.prior(x, inject=qh.samples)
        kls = hierarchy_kl(qh, ph)
        z = qh.samples
    else:
        kls = []
        z = zero_latent_grids(models, x.shape[0], x.shape[-1])
    probs = models.segmentor(x, z)
    rec = rec_loss(probs, y1, cfg.losses)
    elbo = elbo_loss(rec, kls, cfg.losses)

    disc = models.discriminator
    if disc is not None:
        disc.eval()
        for p in disc.parameters():
            p.requires_grad_(False)
        mode = cfg.discriminator.fuse_mode
        real_feats = disc.features(fuse(x, y1, mode))
        fake_feats = disc.features(fuse(x, probs, mode))
        msl = multiscale_loss(real_feats, fake_feats)
    else:
        msl = torch.zeros(())
    seg_total, disc_total = total_objective(msl, elbo)
    models.opt_seg.zero_grad()
    seg_total.backward()
    models.opt_seg.step()
    if disc is not None:
        for p in disc.parameters():
            p.requires_grad_(True)
    return {
        "rec": float(rec.detach()),
        "kl_per_scale": [float(k.detach()) for k in kls],
        "msl": float(msl.detach()),
        "seg_total": float(seg_total.detach()),
        "disc_total": float(disc_total.detach()),
    }


def _augmented(ds: Dataset, seed: int, epoch: int, aug_cfg) -> Dataset:
    cases = []
    for idx, case in enumerate(ds.cases):
        rng = np.random.default_rng([seed, epoch, idx])
        img, lbl = augment(case.image, case.label, aug_cfg, rng)
        cases.append(Case(img, lbl, case.case_id))
    return Dataset(cases, split_tag=ds.split_tag)


def _model_arrays(models: ModelBundle) -> tuple[dict[str, np.ndarray], dict]:
    arrays: dict[str, np.ndarray] = {}
    meta: dict = {"optimizers": {}}
    named = {
        "segmentor": models.segmentor,
        "prior": models.prior,
        "posterior": models.posterior,
        "discriminator": models.discriminator,
    }
    for prefix, net in named.items():
        if net is None:
            continue
        for key, tensor in net.state_dict().items():
            arrays[f"{prefix}/{key}"] = tensor.detach().cpu().numpy()
    for prefix, opt in (("opt_seg", models.opt_seg), ("opt_disc", models.opt_disc)):
        if opt is None:
            continue
        sd = opt.state_dict()
        scalars: dict = {}
        for idx, st in sd["state"].items():
            for k, v in st.items():
                if torch.is_tensor(v):
                    arrays[f"{prefix}/state/{idx}/{k}"] = v.detach().cpu().numpy()
                else:
                    scalars.setdefault(str(idx), {})[k] = v
        meta["optimizers"][prefix] = {
            "param_groups": sd["param_groups"],
            "scalar_state": scalars,
        }
    arrays["rng/sample_gen"] = models.sample_gen.get_state().numpy()
    arrays["rng/torch_global"] = torch.get_rng_state().numpy()
    return arrays, meta


def _restore_optimizer(opt: torch.optim.Adam, prefix: str, ckpt: CheckpointData) -> None:
    spec = ckpt.meta["optimizers"][prefix]
    state: dict[int, dict] = {}
    for name, arr in ckpt.arrays.items():
        if name.startswith(f"{prefix}/state/"):
            _, _, idx, key = name.split("/", 3)
            state.setdefault(int(idx), {})[key] = torch.from_numpy(arr.copy())
    for idx, kv in spec["scalar_state"].items():
        state.setdefault(int(idx), {}).update(kv)
    opt.load_state_dict({"state": state, "param_groups": spec["param_groups"]})


def save_models(models: ModelBundle, path: str | Path, meta_extra: dict | None = None) -> Path:
    arrays, meta = _model_arrays(models)
    meta.update(meta_extra or {})
    return save_checkpoint(path, arrays, config=models.config.to_dict(), meta=meta)


def load_models(path: str | Path, cfg: RunConfig | None = None) -> tuple[ModelBundle, dict]:
    """Rebuild a bundle from a checkpoint (or against an explicit config)."""
    ckpt = load_checkpoint(path)
    if cfg is None:
        cfg = config_from_dict(ckpt.config)
    models = build_models(cfg)
    named = {
        "segmentor": models.segmentor,
        "prior": models.prior,
        "posterior": models.posterior,
        "discriminator": models.discriminator,
    }
    for prefix, net in named.items():
        if net is None:
            continue
        keys = {
            name[len(prefix) + 1 :]: name
            for name in ckpt.arrays
            if name.startswith(f"{prefix}/")
        }
        if not keys:
            raise MissingComponentError(
                f"{path}: checkpoint has no '{prefix}' component required by the config"
            )
        state = {k: torch.from_numpy(ckpt.arrays[n].copy()) for k, n in keys.items()}
        net.load_state_dict(state)
    _restore_optimizer(models.opt_seg, "opt_seg", ckpt)
    if models.opt_disc is not None:
        _restore_optimizer(models.opt_disc, "opt_disc", ckpt)
    models.sample_gen.set_state(torch.from_numpy(ckpt.arrays["rng/sample_gen"].copy()))
    torch.set_rng_state(torch.from_numpy(ckpt.arrays["rng/torch_global"].copy()))
    return models, ckpt.meta


def fit(
    train_ds: Dataset,
    val_ds: Dataset,
    cfg: RunConfig,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
    validate_every: int = 1,
) -> tuple[Path, RunHistory]:
    """Run the full alternating loop; returns (final checkpoint, history)."""
    cfg.validate()
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("train and validation datasets must be non-empty")
    for ds in (train_ds, val_ds):
        if ds.num_classes != cfg.segmentor.num_classes:
            raise ClassCountError(
                f"dataset has {ds.num_classes} classes, config expects "
                f"{cfg.segmentor.num_classes}"
            )

    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    history_path = out_dir / "history.jsonl"

    if resume_from is not None:
        models, meta = load_models(resume_from, cfg)
        start_epoch = int(meta["epoch"])
        step = int(meta["step"])
        mode = "a"
    else:
        models = build_models(cfg)
        start_epoch = 0
        step = 0
        mode = "w"

    history = RunHistory()
    last_ckpt: Path | None = Path(resume_from) if resume_from else None
    multiple = cfg.segmentor.required_multiple()
    warmup = cfg.train.adv_warmup_steps

    with open(history_path, mode) as log:
        for epoch in range(start_epoch, cfg.train.epochs):
            epoch_start = time.time()
            ds = (
                _augmented(train_ds, cfg.train.seed, epoch, cfg.train.aug)
                if cfg.train.augment
                else train_ds
            )
            shuffle_seed = (cfg.train.seed * 1_000_003 + epoch) % 2**32
            batches = make_batches(ds, cfg.train.batch_size, shuffle_seed, multiple)
            for batch in batches:
                try:
                    adversarial_on = models.discriminator is not None and step >= warmup
                    if adversarial_on:
                        for _ in range(cfg.train.disc_steps_per_seg_step):
                            train_step_discriminator(models, batch)
                    stats = train_step_segmentor(models, batch)
                except NumericalAbort as e:
                    raise NumericalAbort(str(e), last_checkpoint=last_ckpt) from e
                step += 1
                record = {"step": step, **stats}
                history.steps.append(record)
                log.write(json.dumps(record) + "\n")
            epoch_record: dict = {"epoch": epoch + 1, "time_s": round(time.time() - epoch_start, 3)}
            if validate_every and (epoch + 1) % validate_every == 0:
                report = validate(models, val_ds)
                epoch_record["val"] = {
                    "dice": report.aggregate["pooled"]["dice"]["mean"],
                    "jaccard": report.aggregate["pooled"]["jaccard"]["mean"],
                    "hausdorff_mm": report.aggregate["pooled"]["hausdorff_mm"]["mean"],
                }
            history.epochs.append(epoch_record)
            log.write(json.dumps(epoch_record) + "\n")
            if (epoch + 1) % cfg.train.checkpoint_every == 0 or epoch + 1 == cfg.train.epochs:
                last_ckpt = save_models(
                    models,
                    ckpt_dir / f"epoch_{epoch + 1:04d}.ckpt",
                    {"epoch": epoch + 1, "step": step},
                )
    final = ckpt_dir / "final.ckpt"
    save_models(models, final, {"epoch": cfg.train.epochs, "step": step})
    return final, history


def validate(models: ModelBundle, ds: Dataset) -> MetricsReport:
    """Deterministic prior-mean evaluation used for per-epoch curves."""
    return evaluate(Predictor(models), ds, latent_mode="prior_mean")
