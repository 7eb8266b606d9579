import math

import numpy as np
import pytest

from walnet import data
from walnet.imaging import BBox


def fake_records(counts):
    recs = []
    i = 0
    for label, n in enumerate(counts):
        for _ in range(n):
            recs.append(data.SampleRecord(sample_id=f"x{i:05d}",
                                          image=np.zeros((4, 4), np.float32),
                                          label=label))
            i += 1
    return recs


class TestPreprocess:
    @pytest.mark.parametrize("shape", [(19, 29), (134, 564)])
    def test_extreme_roi_sizes_resize_to_224(self, shape):
        rng = np.random.default_rng(0)
        img = rng.random(shape)
        out = data.preprocess(img, BBox.full(*shape), out_size=224)
        assert out.shape == (224, 224)
        assert out.dtype == np.float32
        assert 0.0 <= out.min() and out.max() <= 1.0

    def test_full_box_resize_is_identity(self):
        rng = np.random.default_rng(1)
        img = rng.random((224, 224))
        out = data.preprocess(img, BBox.full(224, 224), out_size=224)
        assert np.allclose(out, img, atol=1e-6)

    def test_uint8_input_rescaled(self):
        img = np.full((40, 40), 128, dtype=np.uint8)
        out = data.preprocess(img, BBox.full(40, 40), out_size=64)
        assert np.allclose(out, 128 / 255, atol=1e-6)

    def test_box_outside_image_rejected(self):
        with pytest.raises(ValueError):
            data.preprocess(np.zeros((30, 30)), BBox(0, 0, 31, 30), out_size=64)

    def test_crop_region_used(self):
        img = np.zeros((64, 64))
        img[8:24, 8:24] = 1.0
        out = data.preprocess(img, BBox(8, 8, 24, 24), out_size=32)
        assert np.allclose(out, 1.0, atol=1e-6)


class TestSyntheticGenerator:
    def test_deterministic_given_seed(self):
        spec = data.SyntheticSpec(counts=(3, 4, 3), size=32, seed=9)
        a = data.generate_synthetic(spec)
        b = data.generate_synthetic(spec)
        for ra, rb in zip(a, b):
            assert np.array_equal(ra.image, rb.image)
            assert np.array_equal(ra.gt_mask, rb.gt_mask)
            assert ra.label == rb.label

    def test_saved_datasets_byte_identical(self, tmp_path):
        spec = data.SyntheticSpec(counts=(2, 2, 2), size=32, seed=4)
        d1 = data.save_dataset(data.generate_synthetic(spec), tmp_path / "a",
                               spec=spec)
        d2 = data.save_dataset(data.generate_synthetic(spec), tmp_path / "b",
                               spec=spec)
        for rel in sorted(p.relative_to(d1) for p in d1.rglob("*") if p.is_file()):
            assert (d1 / rel).read_bytes() == (d2 / rel).read_bytes()

    def test_class_histogram_matches_counts(self):
        spec = data.SyntheticSpec(counts=(5, 7, 6), size=32, seed=0)
        recs = data.generate_synthetic(spec)
        hist = np.bincount([r.label for r in recs], minlength=3)
        assert tuple(hist) == (5, 7, 6)

    def test_mask_area_within_radius_derived_bounds(self):
        spec = data.SyntheticSpec(counts=(20, 20, 20), seed=5)
        lo, hi = spec.radius_frac_range
        for rec in data.generate_synthetic(spec):
            e = rec.meta["ellipse"]
            ideal = math.pi * e["a"] * e["b"]
            area = int(rec.gt_mask.sum())
            assert abs(area - ideal) <= 0.05 * ideal
            assert math.pi * (lo * spec.size) ** 2 * 0.95 <= area
            assert area <= math.pi * (hi * spec.size) ** 2 * 1.05

    def test_classes_separable_only_with_mask(self):
        spec = data.SyntheticSpec(counts=(40, 60, 40), seed=5)
        recs = data.generate_synthetic(spec)
        global_means = {c: [] for c in range(3)}
        mask_means = {c: [] for c in range(3)}
        for r in recs:
            global_means[r.label].append(float(r.image.mean()))
            mask_means[r.label].append(float(r.image[r.gt_mask > 0].mean()))
        # knowing the lesion: clean intensity bands per class
        assert min(mask_means[0]) > 0.70            # hyperechoic bright
        assert max(mask_means[1]) < 0.35            # hypoechoic dark
        assert 0.45 < min(mask_means[2]) and max(mask_means[2]) < 0.62
        # not knowing it: whole-image means overlap across classes
        assert max(global_means[1]) > min(global_means[0])
        assert max(global_means[1]) > min(global_means[2])
        assert max(global_means[2]) > min(global_means[0])

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            data.SyntheticSpec(counts=(0, 1, 1)).validate()
        with pytest.raises(ValueError):
            data.SyntheticSpec(size=16).validate()
        with pytest.raises(ValueError):
            data.SyntheticSpec(radius_frac_range=(0.2, 0.3)).validate()

    def test_worker_cap_env(self, monkeypatch):
        monkeypatch.setenv("WALNET_NUM_WORKERS", "1")
        spec = data.SyntheticSpec(counts=(2, 2, 2), size=32, seed=1)
        serial = data.generate_synthetic(spec, workers=1)
        capped = data.generate_synthetic(spec, workers=8)
        for a, b in zip(serial, capped):
            assert np.array_equal(a.image, b.image)

    def test_parallel_equals_serial(self):
        spec = data.SyntheticSpec(counts=(3, 3, 3), size=32, seed=2)
        serial = data.generate_synthetic(spec, workers=1)
        parallel = data.generate_synthetic(spec, workers=4)
        for a, b in zip(serial, parallel):
            assert np.array_equal(a.image, b.image)


class TestSplit:
    def test_clinical_scale_sizes_frozen(self):
        recs = fake_records((301, 605, 364))
        train, val, test = data.split(recs, (0.6, 0.2, 0.2), seed=0)
        assert (len(train), len(val), len(test)) == (762, 254, 254)

    def test_same_seed_same_membership(self):
        recs = fake_records((30, 40, 30))
        a = data.split(recs, seed=3)
        b = data.split(recs, seed=3)
        for pa, pb in zip(a, b):
            assert [r.sample_id for r in pa] == [r.sample_id for r in pb]

    def test_different_seed_changes_membership(self):
        recs = fake_records((30, 40, 30))
        a = data.split(recs, seed=3)[0]
        b = data.split(recs, seed=4)[0]
        assert {r.sample_id for r in a} != {r.sample_id for r in b}

    def test_disjoint_and_complete(self):
        recs = fake_records((13, 17, 11))
        parts = data.split(recs, seed=1)
        ids = [r.sample_id for part in parts for r in part]
        assert len(ids) == len(set(ids)) == len(recs)

    def test_stratification_within_one_sample(self):
        recs = fake_records((31, 57, 44))
        parts = data.split(recs, (0.6, 0.2, 0.2), seed=2)
        for label, n_class in enumerate((31, 57, 44)):
            for part, ratio in zip(parts, (0.6, 0.2, 0.2)):
                got = sum(1 for r in part if r.label == label)
                assert abs(got - ratio * n_class) <= 1

    def test_small_class_rejected(self):
        with pytest.raises(ValueError, match="fewer than 3"):
            data.split(fake_records((2, 5, 5)))

    def test_bad_ratios_rejected(self):
        recs = fake_records((5, 5, 5))
        with pytest.raises(ValueError):
            data.split(recs, (0.5, 0.2, 0.2))

    def test_group_key_keeps_groups_together(self):
        recs = fake_records((12, 12, 12))
        for i, rec in enumerate(recs):
            rec.meta["patient"] = f"p{i // 3}"
        parts = data.split(recs, seed=0, group_key="patient")
        assignment = {}
        for k, part in enumerate(parts):
            for r in part:
                gid = r.meta["patient"]
                assert assignment.setdefault(gid, k) == k


class TestDatasetIo:
    def test_roundtrip(self, tmp_path):
        spec = data.SyntheticSpec(counts=(2, 3, 2), size=32, seed=7)
        recs = data.generate_synthetic(spec)
        data.save_dataset(recs, tmp_path, spec=spec)
        loaded = data.load_dataset(tmp_path)
        assert [r.sample_id for r in loaded] == [r.sample_id for r in recs]
        assert [r.label for r in loaded] == [r.label for r in recs]
        for a, b in zip(loaded, recs):
            assert np.array_equal(a.gt_mask, b.gt_mask)
            assert np.abs(a.image - b.image).max() <= (0.5 / 255) + 1e-6

    def test_missing_dir_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            data.load_dataset(tmp_path / "nope")
