import numpy as np
import pytest
import torch

from spdnet.config import (
    DiscriminatorConfig,
    PhantomConfig,
    ProbabilisticConfig,
    SegmentorConfig,
    resolve_config,
)
from spdnet.data.phantom import generate_phantom
from spdnet.data.types import Case, Dataset


@pytest.fixture(autouse=True)
def _single_thread():
    # Keeps small-tensor runs deterministic and avoids oversubscription.
    torch.set_num_threads(max(1, torch.get_num_threads()))
    yield


@pytest.fixture
def tiny_seg_cfg():
    # 32x32 inputs, two stages; required pad multiple 2 * 2 * 4 = 16.
    return SegmentorConfig(
        patch_size=2,
        stage_channels=(8, 16),
        stage_depths=(1, 1),
        window_size=4,
        num_classes=2,
    )


@pytest.fixture
def tiny_prob_cfg():
    return ProbabilisticConfig(channels=(8, 16), latent_channels=1)


@pytest.fixture
def tiny_disc_cfg():
    return DiscriminatorConfig(num_layers=3, base_channels=8)


def tiny_run_overrides(**train_overrides) -> dict:
    ov = {
        "data": {"num_classes": 2, "phantom": {"image_size": 32}},
        "segmentor": {
            "stage_channels": [8, 16],
            "stage_depths": [1, 1],
            "window_size": 4,
            "num_classes": 2,
        },
        "probabilistic": {"channels": [8, 16]},
        "discriminator": {"num_layers": 3, "base_channels": 8},
        "train": {
            "epochs": 2,
            "batch_size": 4,
            "learning_rate": 1e-3,
            "checkpoint_every": 1,
            "augment": False,
        },
    }
    ov["train"].update(train_overrides)
    return ov


def tiny_run_config(**train_overrides):
    return resolve_config(overrides=tiny_run_overrides(**train_overrides))


def phantom_dataset(n: int, phantom_cfg: PhantomConfig, tag: str = "train") -> Dataset:
    cases = []
    for i in range(n):
        img, lbl = generate_phantom(phantom_cfg, np.random.default_rng([phantom_cfg.seed, i]))
        cases.append(Case(img, lbl, f"phantom_{i:04d}"))
    return Dataset(cases, split_tag=tag)
