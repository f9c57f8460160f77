import numpy as np
import pytest
import torch

from spdnet.data import Image
from spdnet.predict import Predictor, segment_image, zero_latent_grids
from spdnet.trainer import build_models

from conftest import tiny_run_config


@pytest.fixture(scope="module")
def bundle():
    return build_models(tiny_run_config())


class TestSegmentImage:
    def test_pads_and_crops_non_multiple_shapes(self, bundle):
        rng = np.random.default_rng(0)
        img = Image(rng.random((30, 23)))
        res = segment_image(bundle, img)
        assert res.labels.shape == (30, 23)
        assert res.probs.shape == (2, 30, 23)
        assert res.labels.dtype == np.int64
        assert set(np.unique(res.labels)) <= {0, 1}
        total = res.probs.sum(axis=0)
        np.testing.assert_allclose(total, np.ones_like(total), atol=1e-5)
        assert res.uncertainty is None and res.samples == 1

    def test_prior_mean_deterministic(self, bundle):
        img = Image(np.random.default_rng(1).random((32, 32)))
        a = segment_image(bundle, img, latent_mode="prior_mean")
        b = segment_image(bundle, img, latent_mode="prior_mean")
        np.testing.assert_array_equal(a.probs, b.probs)

    def test_prior_sample_uncertainty(self, bundle):
        img = Image(np.random.default_rng(2).random((32, 32)))
        res = segment_image(
            bundle,
            img,
            latent_mode="prior_sample",
            samples=4,
            rng=torch.Generator().manual_seed(0),
        )
        assert res.samples == 4
        assert res.uncertainty is not None
        assert res.uncertainty.shape == (32, 32)
        assert res.uncertainty.min() >= 0.0
        assert res.uncertainty.max() > 0.0
        total = res.probs.sum(axis=0)
        np.testing.assert_allclose(total, np.ones_like(total), atol=1e-5)

    def test_prior_sample_seeded(self, bundle):
        img = Image(np.random.default_rng(3).random((32, 32)))
        a = segment_image(bundle, img, latent_mode="prior_sample", samples=3,
                          rng=torch.Generator().manual_seed(9))
        b = segment_image(bundle, img, latent_mode="prior_sample", samples=3,
                          rng=torch.Generator().manual_seed(9))
        np.testing.assert_array_equal(a.probs, b.probs)
        np.testing.assert_array_equal(a.uncertainty, b.uncertainty)

    def test_zero_mode_matches_zero_grids(self, bundle):
        img = Image(np.random.default_rng(4).random((32, 32)))
        res = segment_image(bundle, img, latent_mode="zero")
        x = torch.from_numpy(img.pixels.astype(np.float32))[None, None]
        bundle.segmentor.eval()
        with torch.no_grad():
            direct = bundle.segmentor(x, zero_latent_grids(bundle, 1, 32))[0].numpy()
        np.testing.assert_allclose(res.probs, direct, atol=1e-6)

    def test_unknown_mode_rejected(self, bundle):
        with pytest.raises(ValueError, match="latent_mode"):
            segment_image(bundle, Image(np.zeros((32, 32))), latent_mode="posterior")

    def test_ablated_bundle_falls_back_to_zero_latents(self):
        slim = build_models(tiny_run_config(ablation={"probabilistic": False}))
        res = segment_image(slim, Image(np.zeros((32, 32))), latent_mode="prior_mean")
        assert res.probs.shape == (2, 32, 32)


class TestZeroLatentGrids:
    def test_shapes_coarse_to_fine(self, bundle):
        grids = zero_latent_grids(bundle, batch=3, side=32)
        assert [tuple(g.shape) for g in grids] == [(3, 1, 8, 8), (3, 1, 16, 16)]
        assert all(g.abs().sum() == 0 for g in grids)


class TestPredictor:
    def test_predict_labels(self, bundle):
        pred = Predictor(bundle)
        assert pred.num_classes == 2
        labels = pred.predict_labels(Image(np.random.default_rng(5).random((30, 30))))
        assert labels.shape == (30, 30)
        assert labels.dtype == np.int64
