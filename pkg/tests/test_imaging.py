import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from walnet import imaging


def same_partition(a, b):
    """True when two label maps induce the same pixel partition."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    pairs = len(set(zip(a.tolist(), b.tolist())))
    return pairs == len(set(a.tolist())) == len(set(b.tolist()))


class TestFelzenszwalb:
    def test_constant_image_merges_to_one_region(self):
        img = np.full((32, 32), 0.5)
        labels = imaging.felzenszwalb_segment(img, k=100, sigma=0.8, min_size=1)
        assert labels.max() == 0

    def test_two_halves_split_exactly(self):
        img = np.zeros((32, 32))
        img[:, 16:] = 1.0
        labels = imaging.felzenszwalb_segment(img, k=1, sigma=0, min_size=1)
        assert labels.max() + 1 == 2
        # oracle: connected components of the image thresholded at 0.5
        fg_cc, n_fg = ndimage.label(img >= 0.5)
        bg_cc, n_bg = ndimage.label(img < 0.5)
        oracle = np.where(img >= 0.5, fg_cc, n_fg + bg_cc)
        assert n_fg + n_bg == 2
        assert same_partition(labels, oracle)

    def test_monotone_k_extremes(self):
        img = np.zeros((32, 32))
        img[:, 16:] = 1.0
        coarse = imaging.felzenszwalb_segment(img, k=1e6, sigma=0, min_size=1)
        fine = imaging.felzenszwalb_segment(img, k=1, sigma=0, min_size=1)
        assert coarse.max() + 1 == 1
        assert fine.max() + 1 == 2

    def test_labels_are_contiguous_partition(self):
        rng = np.random.default_rng(7)
        img = rng.random((24, 24))
        labels = imaging.felzenszwalb_segment(img, k=20, sigma=0.5, min_size=4)
        m = labels.max() + 1
        counts = np.bincount(labels.ravel(), minlength=m)
        assert (counts > 0).all()
        assert labels.min() == 0
        assert labels.shape == img.shape

    def test_regions_are_8_connected(self):
        rng = np.random.default_rng(3)
        img = rng.random((20, 20))
        labels = imaging.felzenszwalb_segment(img, k=30, sigma=0.6, min_size=5)
        eight = np.ones((3, 3), dtype=int)
        for r in range(labels.max() + 1):
            _, n = ndimage.label(labels == r, structure=eight)
            assert n == 1

    def test_min_size_enforced(self):
        rng = np.random.default_rng(11)
        img = rng.random((24, 24))
        labels = imaging.felzenszwalb_segment(img, k=5, sigma=0, min_size=16)
        counts = np.bincount(labels.ravel())
        assert counts.min() >= 16

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        img = rng.random((28, 28))
        a = imaging.felzenszwalb_segment(img, k=40, sigma=0.8, min_size=8)
        b = imaging.felzenszwalb_segment(img, k=40, sigma=0.8, min_size=8)
        assert np.array_equal(a, b)

    def test_multichannel_euclidean_weights(self):
        img = np.zeros((16, 16, 3))
        img[:, 8:, 0] = 1.0
        labels = imaging.felzenszwalb_segment(img, k=1, sigma=0, min_size=1)
        assert labels.max() + 1 == 2

    @pytest.mark.parametrize("kwargs", [
        dict(k=0), dict(k=-1), dict(sigma=-0.1), dict(min_size=0)])
    def test_parameter_errors(self, kwargs):
        img = np.zeros((8, 8))
        base = dict(k=10.0, sigma=0.5, min_size=1)
        base.update(kwargs)
        with pytest.raises(ValueError):
            imaging.felzenszwalb_segment(img, **base)

    def test_too_small_image_rejected(self):
        with pytest.raises(ValueError):
            imaging.felzenszwalb_segment(np.zeros((1, 5)), k=10)

    def test_out_of_range_values_rejected(self):
        with pytest.raises(ValueError):
            imaging.felzenszwalb_segment(np.full((8, 8), 1.5), k=10)


class TestResizeBilinear:
    def test_identity_size(self):
        rng = np.random.default_rng(0)
        m = rng.random((9, 13))
        out = imaging.resize_bilinear(m, 9, 13)
        assert np.allclose(out, m, atol=1e-6)

    def test_constant_preserved(self):
        m = np.full((5, 7), 0.37)
        for h, w in [(1, 1), (3, 3), (10, 20), (7, 5)]:
            assert np.allclose(imaging.resize_bilinear(m, h, w), 0.37)

    def test_2x2_to_3x3_center(self):
        m = np.array([[0.0, 1.0], [1.0, 0.0]])
        out = imaging.resize_bilinear(m, 3, 3)
        # oracle: half-pixel-center formula at output (1,1) samples input (0.5, 0.5)
        assert out[1, 1] == pytest.approx(0.5, abs=1e-12)

    def test_matches_torch_interpolate(self):
        rng = np.random.default_rng(2)
        for in_hw, out_hw in [((7, 5), (13, 11)), ((16, 16), (5, 9)),
                              ((3, 4), (4, 3)), ((2, 2), (8, 8))]:
            m = rng.random(in_hw)
            ours = imaging.resize_bilinear(m, *out_hw)
            theirs = torch.nn.functional.interpolate(
                torch.from_numpy(m)[None, None], size=out_hw,
                mode="bilinear", align_corners=False)[0, 0].numpy()
            assert np.allclose(ours, theirs, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 20),
           st.integers(1, 20), st.integers(0, 2**31 - 1))
    def test_extrema_bounded(self, in_h, in_w, out_h, out_w, seed):
        m = np.random.default_rng(seed).random((in_h, in_w))
        out = imaging.resize_bilinear(m, out_h, out_w)
        assert out.min() >= m.min() - 1e-12
        assert out.max() <= m.max() + 1e-12

    def test_bad_target_size(self):
        with pytest.raises(ValueError):
            imaging.resize_bilinear(np.zeros((4, 4)), 0, 3)


class TestMinmaxNormalize:
    def test_simple_example(self):
        out = imaging.minmax_normalize(np.array([[0.0, 2.0], [1.0, 0.0]]))
        assert np.allclose(out, [[0.0, 1.0], [0.5, 0.0]])

    def test_constant_maps_to_zeros(self):
        out = imaging.minmax_normalize(np.full((4, 4), 3.3))
        assert np.array_equal(out, np.zeros((4, 4)))

    def test_random_matches_elementwise_oracle(self):
        rng = np.random.default_rng(1)
        m = rng.normal(size=(16, 16))
        out = imaging.minmax_normalize(m)
        lo, hi = m.min(), m.max()
        for i in range(16):
            for j in range(16):
                assert abs(out[i, j] - (m[i, j] - lo) / (hi - lo)) < 1e-9

    def test_nonfinite_rejected(self):
        bad = np.zeros((3, 3))
        bad[1, 1] = np.nan
        with pytest.raises(ValueError):
            imaging.minmax_normalize(bad)


class TestBinarize:
    def test_boundary_inclusive(self):
        m = np.array([[0.49, 0.5], [0.51, 0.0]])
        assert np.array_equal(imaging.binarize(m, 0.5),
                              [[0, 1], [1, 0]])

    def test_all_zero_map(self):
        assert imaging.binarize(np.zeros((4, 4)), 0.5).sum() == 0

    def test_tiny_threshold_all_ones(self):
        m = np.random.default_rng(0).random((4, 4))
        assert imaging.binarize(m, -1e30).all()

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.001, 100.0), st.floats(-5.0, 5.0),
           st.integers(0, 2**31 - 1))
    def test_affine_invariance_with_minmax(self, a, b, seed):
        m = np.random.default_rng(seed).normal(size=(8, 8))
        base = imaging.binarize(imaging.minmax_normalize(m), 0.5)
        scaled = imaging.binarize(imaging.minmax_normalize(a * m + b), 0.5)
        assert np.array_equal(base, scaled)


class TestPngIo:
    def test_mask_roundtrip(self, tmp_path):
        mask = (np.random.default_rng(0).random((16, 16)) > 0.5).astype(np.uint8)
        p = tmp_path / "mask.png"
        imaging.save_mask_png(mask, p)
        assert np.array_equal(imaging.load_mask_png(p), mask)

    def test_labels_roundtrip_16bit(self, tmp_path):
        labels = np.arange(300, dtype=np.int32).reshape(15, 20) % 280
        p = tmp_path / "labels.png"
        imaging.save_labels_png(labels, p)
        assert np.array_equal(imaging.load_labels_png(p), labels)

    def test_labels_overflow_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            imaging.save_labels_png(np.full((2, 2), 70000), tmp_path / "x.png")


class TestBBox:
    def test_validation(self):
        with pytest.raises(ValueError):
            imaging.BBox(3, 0, 3, 5)
        with pytest.raises(ValueError):
            imaging.BBox(-1, 0, 3, 5)
        box = imaging.BBox(1, 2, 4, 8)
        assert box.height == 3 and box.width == 6
        with pytest.raises(ValueError):
            box.check_within(4, 7)
