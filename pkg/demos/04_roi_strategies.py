"""Geometry of the six ROI strategies on one example.

From a segmentation probability map we derive the lesion box, dilate it, and
apply each strategy to a feature pyramid; the printed boxes and feature norms
show what each variant keeps or discards.
"""

import numpy as np
import torch

from walnet.imaging import BBox
from walnet.rcm import (STRATEGIES, RoiParams, apply_roi_strategy,
                        dilate_and_clamp, mask_to_bbox)

H = W = 64
STRIDES = (4, 8, 16, 32)

# a confident blob prediction around rows 20-34, cols 24-44
seg = torch.zeros(1, 1, H, W)
seg[:, :, 20:34, 24:44] = 0.9

mask = (seg[0, 0].numpy() >= 0.5).astype(np.uint8)
tight = mask_to_bbox(mask)
dilated = dilate_and_clamp(tight, 1 / 7, H, W)
print(f"tight lesion box   : {tight}")
print(f"dilated (lambda=1/7, pad {int(H / 7)}px): {dilated}")

torch.manual_seed(0)
features = [torch.randn(1, 8, H // s, W // s) for s in STRIDES]
base_norms = [float(f.abs().mean()) for f in features]

print(f"\n{'strategy':<14} box (input px)          mean|feature| per depth")
for strategy in STRATEGIES:
    out, boxes = apply_roi_strategy(features, seg,
                                    RoiParams(strategy=strategy), STRIDES)
    norms = "  ".join(f"{float(f.abs().mean()) / b:.2f}x"
                      for f, b in zip(out, base_norms))
    box = boxes[0]
    box_txt = "full image" if box == BBox.full(H, W) else str(box)
    print(f"{strategy:<14} {box_txt:<23} {norms}")

print("\n`crop` zooms the tight box; `dilated_crop` keeps a margin of context;")
print("`bg_rm` zeroes background features; `rwm` reweights them continuously.")
