import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from walnet import rcm
from walnet.imaging import BBox

STRIDES = (4, 8, 16, 32)


def features_for(batch=2, input_size=64):
    torch.manual_seed(0)
    chans = (3, 4, 5, 6)
    return [torch.randn(batch, c, input_size // s, input_size // s)
            for c, s in zip(chans, STRIDES)]


class TestMaskToBbox:
    def test_empty_mask(self):
        assert rcm.mask_to_bbox(np.zeros((8, 8), dtype=np.uint8)) is None

    def test_single_pixel(self):
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[3, 5] = 1
        assert rcm.mask_to_bbox(mask) == BBox(3, 5, 4, 6)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_matches_coordinate_scan_oracle(self, seed):
        rng = np.random.default_rng(seed)
        mask = (rng.random((12, 15)) > 0.85).astype(np.uint8)
        box = rcm.mask_to_bbox(mask)
        coords = [(r, c) for r in range(12) for c in range(15) if mask[r, c]]
        if not coords:
            assert box is None
        else:
            rows = [r for r, _ in coords]
            cols = [c for _, c in coords]
            assert box == BBox(min(rows), min(cols), max(rows) + 1, max(cols) + 1)


class TestDilateAndClamp:
    def test_lambda_one_seventh_of_224(self):
        box = rcm.dilate_and_clamp(BBox(10, 30, 20, 40), 1 / 7, 224, 224)
        assert int((1 / 7) * 224) == 32
        assert box == BBox(0, 0, 52, 72)

    def test_zero_lambda_identity(self):
        box = BBox(5, 6, 10, 12)
        assert rcm.dilate_and_clamp(box, 0.0, 32, 32) == box

    def test_full_box_saturates(self):
        box = BBox.full(64, 48)
        assert rcm.dilate_and_clamp(box, 0.3, 64, 48) == box

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.49))
    def test_monotone_and_bounded(self, seed, lam):
        rng = np.random.default_rng(seed)
        h, w = int(rng.integers(4, 64)), int(rng.integers(4, 64))
        r0 = int(rng.integers(0, h - 1))
        c0 = int(rng.integers(0, w - 1))
        box = BBox(r0, c0, int(rng.integers(r0 + 1, h + 1)),
                   int(rng.integers(c0 + 1, w + 1)))
        out = rcm.dilate_and_clamp(box, lam, h, w)
        assert out.row0 <= box.row0 and out.col0 <= box.col0
        assert out.row1 >= box.row1 and out.col1 >= box.col1
        assert 0 <= out.row0 < out.row1 <= h
        assert 0 <= out.col0 < out.col1 <= w
        # oracle: plain arithmetic with clamping
        pr, pc = int(lam * h), int(lam * w)
        assert out == BBox(max(box.row0 - pr, 0), max(box.col0 - pc, 0),
                           min(box.row1 + pr, h), min(box.col1 + pc, w))

    def test_box_outside_image_rejected(self):
        with pytest.raises(ValueError):
            rcm.dilate_and_clamp(BBox(0, 0, 40, 40), 0.1, 32, 32)


class TestScaleBoxToStride:
    def test_stride_arithmetic_example(self):
        out = rcm.scale_box_to_stride(BBox(0, 0, 52, 72), 32, 7, 7)
        assert (out.row0, out.row1) == (0, 2)
        assert (out.col0, out.col1) == (0, 3)

    def test_random_boxes_match_arithmetic_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            h = w = 224
            r0 = int(rng.integers(0, h - 1))
            c0 = int(rng.integers(0, w - 1))
            box = BBox(r0, c0, int(rng.integers(r0 + 1, h + 1)),
                       int(rng.integers(c0 + 1, w + 1)))
            for s in STRIDES:
                fh, fw = h // s, w // s
                out = rcm.scale_box_to_stride(box, s, fh, fw)
                er0 = min(box.row0 // s, fh - 1)
                ec0 = min(box.col0 // s, fw - 1)
                er1 = max(min(math.ceil(box.row1 / s), fh), er0 + 1)
                ec1 = max(min(math.ceil(box.col1 / s), fw), ec0 + 1)
                assert out == BBox(er0, ec0, er1, ec1)

    def test_degenerate_repaired_to_1x1(self):
        out = rcm.scale_box_to_stride(BBox(30, 30, 31, 31), 32, 1, 1)
        assert (out.height, out.width) == (1, 1)


class TestCropRoiFeatures:
    def test_full_box_is_resize_identity(self):
        feats = [f[0] for f in features_for()]
        params = rcm.RoiParams(strategy="crop")
        out = rcm.crop_roi_features(feats, BBox.full(64, 64), params,
                                    (64, 64), STRIDES)
        for a, b in zip(out, feats):
            assert torch.allclose(a, b, atol=1e-6)

    def test_output_dims_match_configuration(self):
        feats = [f[0] for f in features_for()]
        sizes = ((8, 8), (4, 4), (2, 2), (2, 2))
        params = rcm.RoiParams(strategy="crop", output_sizes=sizes)
        out = rcm.crop_roi_features(feats, BBox(4, 8, 40, 50), params,
                                    (64, 64), STRIDES)
        for o, f, size in zip(out, feats, sizes):
            assert o.shape == (f.shape[0], *size)


class TestApplyRoiStrategy:
    def seg(self, batch=2, value=0.7, size=64):
        return torch.full((batch, 1, size, size), value)

    def test_none_is_identity(self):
        feats = features_for()
        out, boxes = rcm.apply_roi_strategy(feats, self.seg(),
                                            rcm.RoiParams(strategy="none"),
                                            STRIDES)
        for a, b in zip(out, feats):
            assert torch.equal(a, b)
        assert boxes == [BBox.full(64, 64)] * 2

    def test_all_foreground_dilated_crop_keeps_features(self):
        feats = features_for()
        out, boxes = rcm.apply_roi_strategy(
            feats, self.seg(value=0.9),
            rcm.RoiParams(strategy="dilated_crop"), STRIDES)
        assert boxes == [BBox.full(64, 64)] * 2
        for a, b in zip(out, feats):
            assert torch.allclose(a, b, atol=1e-6)

    def test_rwm_constant_half_halves_features(self):
        feats = features_for()
        out, _ = rcm.apply_roi_strategy(feats, self.seg(value=0.5),
                                        rcm.RoiParams(strategy="rwm"), STRIDES)
        for a, b in zip(out, feats):
            assert torch.allclose(a, 0.5 * b, atol=1e-6)

    def test_bg_rm_zeroes_background(self):
        feats = features_for()
        seg = self.seg(value=0.0)
        seg[:, :, :, 32:] = 1.0
        out, _ = rcm.apply_roi_strategy(feats, seg,
                                        rcm.RoiParams(strategy="bg_rm"),
                                        STRIDES)
        for a, b in zip(out, feats):
            half = b.shape[-1] // 2
            assert torch.equal(a[..., :half], torch.zeros_like(b[..., :half]))
            assert torch.equal(a[..., half:], b[..., half:])

    def test_empty_mask_falls_back_to_full_box(self):
        feats = features_for()
        out, boxes = rcm.apply_roi_strategy(
            feats, self.seg(value=0.1),
            rcm.RoiParams(strategy="dilated_crop"), STRIDES)
        assert boxes == [BBox.full(64, 64)] * 2
        for a, b in zip(out, feats):
            assert torch.allclose(a, b, atol=1e-6)

    def test_dilated_box_contains_crop_box(self):
        seg = self.seg(value=0.0)
        seg[:, :, 20:30, 24:40] = 1.0
        feats = features_for()
        _, crop_boxes = rcm.apply_roi_strategy(
            feats, seg, rcm.RoiParams(strategy="crop"), STRIDES)
        _, dilated_boxes = rcm.apply_roi_strategy(
            feats, seg, rcm.RoiParams(strategy="dilated_crop"), STRIDES)
        for c, d in zip(crop_boxes, dilated_boxes):
            assert d.row0 <= c.row0 and d.col0 <= c.col0
            assert d.row1 >= c.row1 and d.col1 >= c.col1

    @pytest.mark.parametrize("strategy", rcm.STRATEGIES)
    def test_channel_and_spatial_dims_preserved(self, strategy):
        feats = features_for()
        seg = self.seg(value=0.0)
        seg[:, :, 20:30, 24:40] = 1.0
        out, _ = rcm.apply_roi_strategy(feats, seg,
                                        rcm.RoiParams(strategy=strategy),
                                        STRIDES)
        for a, b in zip(out, feats):
            assert a.shape == b.shape

    @pytest.mark.parametrize("strategy",
                             [s for s in rcm.STRATEGIES if s != "none"])
    def test_no_gradient_reaches_seg_prob(self, strategy):
        feats = [f.requires_grad_(True) for f in features_for()]
        seg = self.seg(value=0.0).requires_grad_(True)
        with torch.no_grad():
            seg[:, :, 20:30, 24:40] = 0.9
        out, _ = rcm.apply_roi_strategy(feats, seg,
                                        rcm.RoiParams(strategy=strategy),
                                        STRIDES)
        total = sum(o.sum() for o in out)
        total.backward()
        assert seg.grad is None or torch.equal(seg.grad,
                                               torch.zeros_like(seg))
        assert any(f.grad is not None and f.grad.abs().sum() > 0
                   for f in feats)

    def test_unknown_strategy_rejected(self):
        with pytest.raises(ValueError, match="roi_strategy"):
            rcm.apply_roi_strategy(features_for(), self.seg(),
                                   rcm.RoiParams(strategy="bogus"), STRIDES)
