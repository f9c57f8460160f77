import json
import struct

import numpy as np
import pytest

from spdnet.config import AugConfig, PhantomConfig
from spdnet.data import (
    Batch,
    Case,
    Dataset,
    Image,
    LabelMap,
    assign_splits,
    augment,
    crop_to_shape,
    generate_phantom,
    generate_phantom_with_meta,
    load_acdc_case,
    load_acdc_cases,
    load_dataset,
    make_batches,
    normalize,
    pad_to_square_multiple,
    read_manifest,
    read_nifti,
    save_phantom_case,
    warp_pair,
    write_acdc_manifest,
    write_manifest,
    write_nifti,
    write_phantom_dataset,
)
from spdnet.data.phantom import FAT_FRACTION_BAND, FAT_INTENSITY
from spdnet.errors import SchemaError, ShapeError, UnlabeledCaseError


class TestTypes:
    def test_image_rejects_3d(self):
        with pytest.raises(ShapeError):
            Image(np.zeros((2, 2, 2)))

    def test_image_rejects_nan(self):
        px = np.zeros((4, 4))
        px[0, 0] = np.nan
        with pytest.raises(ValueError):
            Image(px)

    def test_labelmap_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            LabelMap(np.array([[0, 2]]), num_classes=2)
        with pytest.raises(ValueError):
            LabelMap(np.array([[-1, 0]]), num_classes=2)

    def test_dataset_rejects_duplicates(self):
        img = Image(np.zeros((4, 4)))
        lbl = LabelMap(np.zeros((4, 4), dtype=int), num_classes=2)
        with pytest.raises(ValueError, match="duplicate"):
            Dataset([Case(img, lbl, "a"), Case(img, lbl, "a")])

    def test_dataset_rejects_mixed_class_counts(self):
        img = Image(np.zeros((4, 4)))
        a = Case(img, LabelMap(np.zeros((4, 4), dtype=int), num_classes=2), "a")
        b = Case(img, LabelMap(np.zeros((4, 4), dtype=int), num_classes=3), "b")
        with pytest.raises(ValueError, match="num_classes"):
            Dataset([a, b])

    def test_dataset_num_classes(self):
        img = Image(np.zeros((4, 4)))
        ds = Dataset([Case(img, LabelMap(np.zeros((4, 4), dtype=int), num_classes=3), "a")])
        assert ds.num_classes == 3
        assert len(ds) == 1


class TestNifti:
    @pytest.mark.parametrize("name", ["vol.nii", "vol.nii.gz"])
    def test_round_trip(self, tmp_path, name):
        rng = np.random.default_rng(0)
        vol = rng.normal(size=(5, 7, 3)).astype(np.float32)
        path = write_nifti(tmp_path / name, vol, spacing=(1.25, 1.5, 8.0))
        back, spacing = read_nifti(path)
        np.testing.assert_array_equal(back, vol)
        assert spacing == (1.25, 1.5, 8.0)

    def test_int_round_trip(self, tmp_path):
        vol = np.arange(24, dtype=np.int16).reshape(2, 3, 4)
        back, _ = read_nifti(write_nifti(tmp_path / "v.nii", vol))
        np.testing.assert_array_equal(back, vol)
        assert back.dtype == np.int16

    def test_scl_rescale_applied(self, tmp_path):
        vol = np.arange(6, dtype=np.int16).reshape(2, 3)
        path = write_nifti(tmp_path / "v.nii", vol)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<2f", raw, 112, 2.0, 0.5)  # scl_slope, scl_inter
        path.write_bytes(bytes(raw))
        back, _ = read_nifti(path)
        np.testing.assert_allclose(back, vol * 2.0 + 0.5)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "v.nii"
        path.write_bytes(b"\x00" * 100)
        with pytest.raises(ValueError, match="truncated"):
            read_nifti(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = write_nifti(tmp_path / "v.nii", np.zeros((2, 2)))
        raw = bytearray(path.read_bytes())
        raw[344:348] = b"xxx\x00"
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="magic"):
            read_nifti(path)


def _make_acdc_case(case_dir, n_slices=3, frames=("01", "12"), spacing=(1.5, 1.5, 10.0)):
    case_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(7)
    for fr in frames:
        vol = rng.uniform(0, 400, size=(10, 12, n_slices)).astype(np.float32)
        gt = rng.integers(0, 4, size=(10, 12, n_slices)).astype(np.uint8)
        write_nifti(case_dir / f"{case_dir.name}_frame{fr}.nii.gz", vol, spacing)
        write_nifti(case_dir / f"{case_dir.name}_frame{fr}_gt.nii.gz", gt, spacing)
    # cine volume must be ignored by the loader
    write_nifti(
        case_dir / f"{case_dir.name}_4d.nii.gz",
        np.zeros((10, 12, n_slices, 2), dtype=np.float32),
    )


class TestAcdc:
    def test_loads_all_annotated_slices(self, tmp_path):
        case_dir = tmp_path / "patient001"
        _make_acdc_case(case_dir, n_slices=3, frames=("01", "12"))
        pairs = load_acdc_case(case_dir)
        assert len(pairs) == 6
        img, lbl = pairs[0]
        assert img.shape == (10, 12)
        assert img.spacing == (1.5, 1.5)
        assert lbl.num_classes == 4

    def test_case_ids(self, tmp_path):
        case_dir = tmp_path / "patient002"
        _make_acdc_case(case_dir, n_slices=2, frames=("01",))
        cases = load_acdc_cases(case_dir)
        assert [c.case_id for c in cases] == [
            "patient002_frame01_s00",
            "patient002_frame01_s01",
        ]

    def test_missing_gt_raises(self, tmp_path):
        case_dir = tmp_path / "patient003"
        _make_acdc_case(case_dir, frames=("01",))
        (case_dir / "patient003_frame01_gt.nii.gz").unlink()
        with pytest.raises(UnlabeledCaseError):
            load_acdc_case(case_dir)

    def test_empty_dir_raises(self, tmp_path):
        case_dir = tmp_path / "patient004"
        case_dir.mkdir()
        with pytest.raises(UnlabeledCaseError):
            load_acdc_case(case_dir)

    def test_shape_mismatch_raises(self, tmp_path):
        case_dir = tmp_path / "patient005"
        case_dir.mkdir()
        write_nifti(case_dir / "patient005_frame01.nii.gz", np.zeros((8, 8, 2), np.float32))
        write_nifti(case_dir / "patient005_frame01_gt.nii.gz", np.zeros((8, 9, 2), np.uint8))
        with pytest.raises(ShapeError):
            load_acdc_case(case_dir)

    def test_label_out_of_range_raises(self, tmp_path):
        case_dir = tmp_path / "patient006"
        case_dir.mkdir()
        write_nifti(case_dir / "patient006_frame01.nii.gz", np.zeros((8, 8, 1), np.float32))
        write_nifti(
            case_dir / "patient006_frame01_gt.nii.gz", np.full((8, 8, 1), 4, np.uint8)
        )
        with pytest.raises(ValueError, match="label values"):
            load_acdc_case(case_dir)

    def test_manifest_and_load(self, tmp_path):
        for i in (1, 2):
            _make_acdc_case(tmp_path / f"patient{i:03d}", n_slices=2, frames=("01",))
        manifest = write_acdc_manifest(tmp_path, tmp_path / "manifest.json", train_fraction=0.5)
        entries = read_manifest(manifest)
        assert len(entries) == 4
        assert sum(e["split"] == "train" for e in entries) == 2
        ds = load_dataset(manifest, "train", num_classes=4)
        assert len(ds) == 2
        assert ds.num_classes == 4


class TestPhantom:
    def test_deterministic(self):
        cfg = PhantomConfig()
        a_img, a_lbl = generate_phantom(cfg, np.random.default_rng([0, 3]))
        b_img, b_lbl = generate_phantom(cfg, np.random.default_rng([0, 3]))
        np.testing.assert_array_equal(a_img.pixels, b_img.pixels)
        np.testing.assert_array_equal(a_lbl.labels, b_lbl.labels)

    def test_intensity_range_and_label_values(self):
        cfg = PhantomConfig(num_classes=2)
        for i in range(6):
            img, lbl = generate_phantom(cfg, np.random.default_rng([1, i]))
            assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0
            assert set(np.unique(lbl.labels)) <= {0, 1}

    def test_four_class_labels(self):
        cfg = PhantomConfig(num_classes=4)
        img, lbl = generate_phantom(cfg, np.random.default_rng(5))
        assert set(np.unique(lbl.labels)) == {0, 1, 2, 3}

    def test_fat_fraction_in_band(self):
        cfg = PhantomConfig()
        for i in range(8):
            _, _, meta = generate_phantom_with_meta(cfg, np.random.default_rng([2, i]))
            assert FAT_FRACTION_BAND[0] <= meta["fat_fraction"] <= FAT_FRACTION_BAND[1]

    def test_fat_mask_matches_labels(self):
        cfg = PhantomConfig()
        _, lbl, meta = generate_phantom_with_meta(cfg, np.random.default_rng(9))
        np.testing.assert_array_equal(lbl.labels == 1, meta["fat_mask"])

    def test_effusion_is_intensity_twin_of_fat(self):
        # Noise- and blur-free variant isolates the mean-intensity contract.
        cfg = PhantomConfig(motion_blur_prob=0.0, effusion_prob=1.0,
                            effusion_intensity_delta=0.03)
        found = 0
        for i in range(10):
            img, lbl, meta = generate_phantom_with_meta(cfg, np.random.default_rng([3, i]))
            if not meta["effusion_mask"].any():
                continue
            found += 1
            fat_mean = img.pixels[meta["fat_mask"]].mean()
            eff_mean = img.pixels[meta["effusion_mask"]].mean()
            assert abs(fat_mean - FAT_INTENSITY) < 0.01
            assert abs((fat_mean - eff_mean) - cfg.effusion_intensity_delta) < 0.01
            # the twin belongs to the background class
            assert not (lbl.labels[meta["effusion_mask"]] == 1).any()
        assert found >= 5

    def test_blur_affects_image_not_labels(self):
        # Identical rng streams, only the blur gate differs.
        base = dict(image_size=64, effusion_prob=0.5, seed=0)
        crisp_img, crisp_lbl = generate_phantom(
            PhantomConfig(motion_blur_prob=0.0, **base), np.random.default_rng(11)
        )
        blur_img, blur_lbl = generate_phantom(
            PhantomConfig(motion_blur_prob=1.0, **base), np.random.default_rng(11)
        )
        np.testing.assert_array_equal(crisp_lbl.labels, blur_lbl.labels)
        assert not np.array_equal(crisp_img.pixels, blur_img.pixels)
        tv = lambda a: np.abs(np.diff(a, axis=0)).sum() + np.abs(np.diff(a, axis=1)).sum()
        assert tv(blur_img.pixels) < tv(crisp_img.pixels)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError, match="too small"):
            generate_phantom(PhantomConfig(image_size=16), np.random.default_rng(0))

    def test_save_case_artifacts(self, tmp_path):
        cfg = PhantomConfig()
        img, lbl, meta = generate_phantom_with_meta(cfg, np.random.default_rng(4))
        npz_path, sidecar_path = save_phantom_case(tmp_path, "case_0000", img, lbl, meta, seed=4)
        with np.load(npz_path) as z:
            np.testing.assert_array_equal(z["image"], img.pixels)
            np.testing.assert_array_equal(z["label"], lbl.labels)
            assert int(z["num_classes"]) == 2
        side = json.loads(sidecar_path.read_text())
        assert side["case_id"] == "case_0000"
        assert set(side) == {"case_id", "seed", "motion_blur", "effusion", "fat_fraction"}

    def test_write_dataset(self, tmp_path):
        cfg = PhantomConfig(seed=3)
        manifest = write_phantom_dataset(tmp_path, 10, cfg, train_fraction=0.8)
        entries = read_manifest(manifest)
        assert len(entries) == 10
        assert sum(e["split"] == "train" for e in entries) == 8
        train = load_dataset(manifest, "train")
        test = load_dataset(manifest, "test")
        assert len(train) == 8 and len(test) == 2
        assert train.num_classes == 2

    def test_write_dataset_deterministic(self, tmp_path):
        cfg = PhantomConfig(seed=12)
        m1 = write_phantom_dataset(tmp_path / "a", 4, cfg)
        m2 = write_phantom_dataset(tmp_path / "b", 4, cfg)
        for e1, e2 in zip(read_manifest(m1), read_manifest(m2)):
            assert e1["case_id"] == e2["case_id"] and e1["split"] == e2["split"]
            with np.load(e1["image_path"]) as z1, np.load(e2["image_path"]) as z2:
                np.testing.assert_array_equal(z1["image"], z2["image"])
                np.testing.assert_array_equal(z1["label"], z2["label"])


class TestTransforms:
    def test_normalize_range(self):
        img = Image(np.array([[2.0, 6.0], [4.0, 10.0]]))
        out = normalize(img)
        np.testing.assert_allclose(out.pixels, [[0.0, 0.5], [0.25, 1.0]])

    def test_normalize_constant(self):
        out = normalize(Image(np.full((3, 3), 5.0)))
        np.testing.assert_array_equal(out.pixels, np.zeros((3, 3)))

    def test_pad_and_crop(self):
        arr = np.arange(12, dtype=np.float64).reshape(3, 4)
        padded = pad_to_square_multiple(arr, 8)
        assert padded.shape == (8, 8)
        np.testing.assert_array_equal(padded[:3, :4], arr)
        assert padded[3:, :].sum() == 0 and padded[:, 4:].sum() == 0
        np.testing.assert_array_equal(crop_to_shape(padded, (3, 4)), arr)

    def test_pad_noop_when_aligned(self):
        arr = np.ones((8, 8))
        assert pad_to_square_multiple(arr, 4).shape == (8, 8)

    def test_rotation_90_coordinate_map(self):
        # Forward map about center (3.5, 3.5): (2, 5) rel (-1.5, 1.5)
        # -> R(90) @ rel = (-1.5, -1.5) -> (2, 2).
        img = np.zeros((8, 8))
        img[2, 5] = 1.0
        lbl = np.zeros((8, 8), dtype=np.int64)
        lbl[2, 5] = 1
        img_out, lbl_out = warp_pair(img, lbl, 90.0, 0.0, False, False)
        assert img_out[2, 2] == pytest.approx(1.0, abs=1e-6)
        assert lbl_out[2, 2] == 1 and lbl_out.sum() == 1

    def test_flip_x_mirrors_columns(self):
        img = np.zeros((8, 8))
        img[2, 5] = 1.0
        lbl = (img > 0).astype(np.int64)
        img_out, lbl_out = warp_pair(img, lbl, 0.0, 0.0, True, False)
        assert img_out[2, 2] == pytest.approx(1.0, abs=1e-6)
        assert lbl_out[2, 2] == 1

    def test_flip_y_mirrors_rows(self):
        img = np.zeros((8, 8))
        img[2, 5] = 1.0
        lbl = (img > 0).astype(np.int64)
        img_out, lbl_out = warp_pair(img, lbl, 0.0, 0.0, False, True)
        assert img_out[5, 5] == pytest.approx(1.0, abs=1e-6)
        assert lbl_out[5, 5] == 1

    def test_identity_short_circuit(self):
        rng = np.random.default_rng(0)
        img = rng.normal(size=(6, 6))
        lbl = rng.integers(0, 2, size=(6, 6))
        img_out, lbl_out = warp_pair(img, lbl, 0.0, 0.0, False, False)
        np.testing.assert_array_equal(img_out, img)
        np.testing.assert_array_equal(lbl_out, lbl)

    def test_labels_stay_integral(self):
        rng = np.random.default_rng(1)
        lbl = rng.integers(0, 3, size=(16, 16))
        _, lbl_out = warp_pair(rng.normal(size=(16, 16)), lbl, 17.0, 5.0, True, False)
        assert lbl_out.dtype.kind == "i"
        assert set(np.unique(lbl_out)) <= set(np.unique(lbl)) | {0}

    def test_augment_deterministic(self):
        cfg = AugConfig(rotation_max_deg=15.0, skew_max_deg=8.0)
        img, lbl = generate_phantom(PhantomConfig(), np.random.default_rng(2))
        a = augment(img, lbl, cfg, np.random.default_rng(77))
        b = augment(img, lbl, cfg, np.random.default_rng(77))
        np.testing.assert_array_equal(a[0].pixels, b[0].pixels)
        np.testing.assert_array_equal(a[1].labels, b[1].labels)

    def test_augment_identity_when_disabled(self):
        cfg = AugConfig(rotation_max_deg=0.0, skew_max_deg=0.0, flip_x=False, flip_y=False)
        img, lbl = generate_phantom(PhantomConfig(), np.random.default_rng(2))
        out_img, out_lbl = augment(img, lbl, cfg, np.random.default_rng(0))
        np.testing.assert_array_equal(out_img.pixels, img.pixels)
        np.testing.assert_array_equal(out_lbl.labels, lbl.labels)

    def test_augment_shape_mismatch(self):
        img = Image(np.zeros((8, 8)))
        lbl = LabelMap(np.zeros((8, 9), dtype=int), num_classes=2)
        with pytest.raises(ValueError, match="shape"):
            augment(img, lbl, AugConfig(), np.random.default_rng(0))


class TestSplitsAndManifest:
    def _entries(self, n):
        return [
            {"case_id": f"c{i:03d}", "image_path": f"{i}.npz", "label_path": f"{i}.npz"}
            for i in range(n)
        ]

    def test_fraction_exact_up_to_rounding(self):
        out = assign_splits(self._entries(8), train_fraction=0.75, seed=0)
        assert sum(e["split"] == "train" for e in out) == 6

    def test_deterministic_and_order_invariant(self):
        entries = self._entries(12)
        a = {e["case_id"]: e["split"] for e in assign_splits(entries, 0.5, seed=4)}
        b = {e["case_id"]: e["split"] for e in assign_splits(entries[::-1], 0.5, seed=4)}
        assert a == b

    def test_seed_changes_assignment(self):
        entries = self._entries(40)
        a = [e["split"] for e in assign_splits(entries, 0.5, seed=0)]
        b = [e["split"] for e in assign_splits(entries, 0.5, seed=1)]
        assert a != b

    def test_duplicate_ids_rejected(self):
        entries = self._entries(2)
        entries[1]["case_id"] = entries[0]["case_id"]
        with pytest.raises(ValueError, match="duplicate"):
            assign_splits(entries, 0.5, seed=0)

    def test_bad_fraction_rejected(self):
        with pytest.raises(ValueError):
            assign_splits(self._entries(2), 1.5, seed=0)

    @pytest.mark.parametrize(
        "doc, match",
        [
            ({"not": "a list"}, "list"),
            ([["x"]], "not an object"),
            ([{"case_id": "a"}], "missing keys"),
            (
                [{"case_id": "a", "image_path": "x", "label_path": "x", "split": "val"}],
                "unknown split",
            ),
        ],
    )
    def test_manifest_schema_errors(self, tmp_path, doc, match):
        path = tmp_path / "m.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match=match):
            read_manifest(path)

    def test_manifest_bad_json(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{")
        with pytest.raises(SchemaError, match="JSON"):
            read_manifest(path)

    def test_manifest_round_trip(self, tmp_path):
        entries = assign_splits(self._entries(3), 1.0, seed=0)
        path = write_manifest(entries, tmp_path / "m.json")
        assert read_manifest(path) == entries


class TestLoadAndBatch:
    def _dataset(self, tmp_path, n=10):
        manifest = write_phantom_dataset(tmp_path, n, PhantomConfig(seed=1), train_fraction=1.0)
        return load_dataset(manifest, "train")

    def test_load_normalizes(self, tmp_path):
        ds = self._dataset(tmp_path, n=3)
        for case in ds:
            assert case.image.pixels.min() == 0.0
            assert case.image.pixels.max() == 1.0

    def test_load_split_arg_checked(self, tmp_path):
        manifest = write_phantom_dataset(tmp_path, 2, PhantomConfig(seed=1))
        with pytest.raises(ValueError, match="split"):
            load_dataset(manifest, "val")

    def test_batch_sizes(self, tmp_path):
        ds = self._dataset(tmp_path, n=10)
        batches = make_batches(ds, batch_size=4, shuffle_seed=0)
        assert [len(b) for b in batches] == [4, 4, 2]
        seen = [cid for b in batches for cid in b.case_ids]
        assert sorted(seen) == sorted(c.case_id for c in ds)

    def test_batch_shapes_and_dtypes(self, tmp_path):
        ds = self._dataset(tmp_path, n=4)
        (batch,) = make_batches(ds, batch_size=4, shuffle_seed=0, pad_multiple=48)
        assert isinstance(batch, Batch)
        assert batch.images.shape == (4, 96, 96)
        assert batch.images.dtype == np.float32
        assert batch.labels.dtype == np.int64

    def test_batch_order_seeded(self, tmp_path):
        ds = self._dataset(tmp_path, n=8)
        a = make_batches(ds, 4, shuffle_seed=5)
        b = make_batches(ds, 4, shuffle_seed=5)
        c = make_batches(ds, 4, shuffle_seed=6)
        assert [x.case_ids for x in a] == [x.case_ids for x in b]
        assert [x.case_ids for x in a] != [x.case_ids for x in c]

    def test_batch_pads_mixed_sizes(self):
        cases = [
            Case(
                Image(np.ones((h, w))),
                LabelMap(np.zeros((h, w), dtype=int), num_classes=2),
                f"c{i}",
            )
            for i, (h, w) in enumerate([(10, 12), (8, 8)])
        ]
        (batch,) = make_batches(Dataset(cases), batch_size=2, shuffle_seed=0, pad_multiple=4)
        assert batch.images.shape == (2, 12, 12)

    def test_empty_and_bad_batch_size(self):
        with pytest.raises(ValueError):
            make_batches(Dataset([]), 2, 0)
        img = Image(np.zeros((4, 4)))
        ds = Dataset([Case(img, LabelMap(np.zeros((4, 4), dtype=int), 2), "a")])
        with pytest.raises(ValueError):
            make_batches(ds, 0, 0)
