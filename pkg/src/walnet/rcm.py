"""ROI Cropping Module: lesion bounding box from the segmentation prediction,
dilated by a margin, applied to multi-depth classification features.

Box geometry is plain integer arithmetic on numpy masks; the feature
transforms operate on torch tensors. The segmentation prediction is always
detached before boxes or weights are derived from it, so the auxiliary task
influences classification only through shared representations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .imaging import BBox

STRATEGIES = ("none", "dilated_crop", "crop", "bg_rm", "bg_rm_crop", "rwm")


@dataclass
class RoiParams:
    """Binarization threshold, dilation fraction and strategy selection."""

    threshold: float = 0.5
    lambda_frac: float = 1.0 / 7.0
    strategy: str = "dilated_crop"
    # per-depth (h, w) output sizes; None keeps each depth's original dims
    output_sizes: tuple[tuple[int, int], ...] | None = None

    def validate(self) -> "RoiParams":
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must be in (0,1), got {self.threshold}")
        if not 0 <= self.lambda_frac < 0.5:
            raise ValueError(f"lambda_frac must be in [0, 0.5), got {self.lambda_frac}")
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"unknown roi_strategy {self.strategy!r}; choose from {STRATEGIES}")
        return self


def mask_to_bbox(mask: np.ndarray) -> BBox | None:
    """Tight half-open box over nonzero pixels; None for an empty mask."""
    mask = np.asarray(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return BBox(int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1)


def dilate_and_clamp(box: BBox, lambda_frac: float, h: int, w: int) -> BBox:
    """Expand a box by floor(lambda*side) in every direction, clamped to the image."""
    box.check_within(h, w)
    pad_r = int(lambda_frac * h)
    pad_c = int(lambda_frac * w)
    return BBox(max(box.row0 - pad_r, 0), max(box.col0 - pad_c, 0),
                min(box.row1 + pad_r, h), min(box.col1 + pad_c, w))


def scale_box_to_stride(box: BBox, stride: int, feat_h: int, feat_w: int) -> BBox:
    """Map an input-resolution box onto a stride-s feature grid.

    Rounds outward (floor/ceil) so no lesion pixel is dropped, clamps to the
    grid and repairs degenerate results to at least 1x1.
    """
    r0 = min(box.row0 // stride, feat_h - 1)
    c0 = min(box.col0 // stride, feat_w - 1)
    r1 = min(-(-box.row1 // stride), feat_h)
    c1 = min(-(-box.col1 // stride), feat_w)
    r1 = max(r1, r0 + 1)
    c1 = max(c1, c0 + 1)
    return BBox(r0, c0, r1, c1)


def _output_sizes(features, params: RoiParams):
    if params.output_sizes is not None:
        if len(params.output_sizes) != len(features):
            raise ValueError("output_sizes must match the number of depths")
        return params.output_sizes
    return tuple(tuple(f.shape[-2:]) for f in features)


def crop_roi_features(features, box: BBox, params: RoiParams, input_hw,
                      strides) -> list[torch.Tensor]:
    """Crop one sample's per-depth features to ``box`` and resize each crop back.

    ``features`` is a list of (C, h, w) tensors, one per depth; ``box`` lives
    at input resolution.
    """
    h, w = input_hw
    box.check_within(h, w)
    sizes = _output_sizes(features, params)
    out = []
    for feat, stride, size in zip(features, strides, sizes):
        fb = scale_box_to_stride(box, stride, feat.shape[-2], feat.shape[-1])
        crop = feat[:, fb.row0:fb.row1, fb.col0:fb.col1]
        out.append(F.interpolate(crop[None], size=size, mode="bilinear",
                                 align_corners=False)[0])
    return out


def _downsample_map(map_b1hw: torch.Tensor, size) -> torch.Tensor:
    # area averaging: robust to large stride ratios, exact for constants
    return F.interpolate(map_b1hw, size=size, mode="area")


def apply_roi_strategy(features, seg_prob: torch.Tensor, params: RoiParams,
                       strides) -> tuple[list[torch.Tensor], list[BBox]]:
    """Apply the configured ROI strategy to a batch of per-depth features.

    ``features``: list of (B, C, h, w) tensors. ``seg_prob``: (B, 1, H, W)
    segmentation probabilities at input resolution (detached internally).
    Returns the transformed features and the per-sample boxes used (full-image
    boxes for strategies that do not crop, and as the empty-mask fallback).
    """
    params.validate()
    batch = features[0].shape[0]
    h, w = seg_prob.shape[-2:]
    full = BBox.full(h, w)
    if params.strategy == "none":
        return list(features), [full] * batch

    seg = seg_prob.detach()

    if params.strategy == "rwm":
        out = [f * _downsample_map(seg, f.shape[-2:]) for f in features]
        return out, [full] * batch

    fg = (seg >= params.threshold).to(seg.dtype)
    if params.strategy == "bg_rm":
        out = [f * (_downsample_map(fg, f.shape[-2:]) >= 0.5).to(f.dtype)
               for f in features]
        return out, [full] * batch

    if params.strategy == "bg_rm_crop":
        features = [f * (_downsample_map(fg, f.shape[-2:]) >= 0.5).to(f.dtype)
                    for f in features]
        lam = 0.0
    elif params.strategy == "crop":
        lam = 0.0
    else:  # dilated_crop
        lam = params.lambda_frac

    fg_np = fg[:, 0].cpu().numpy()
    boxes = []
    for b in range(batch):
        box = mask_to_bbox(fg_np[b])
        if box is None:
            box = full
        else:
            box = dilate_and_clamp(box, lam, h, w)
        boxes.append(box)

    sizes = _output_sizes(features, params)
    out = []
    for feat, stride, size in zip(features, strides, sizes):
        per_sample = []
        for b, box in enumerate(boxes):
            fb = scale_box_to_stride(box, stride, feat.shape[-2], feat.shape[-1])
            crop = feat[b:b + 1, :, fb.row0:fb.row1, fb.col0:fb.col1]
            per_sample.append(F.interpolate(crop, size=size, mode="bilinear",
                                            align_corners=False))
        out.append(torch.cat(per_sample, dim=0))
    return out, boxes
