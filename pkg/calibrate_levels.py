"""Per-level attention contrast at the best checkpoint, by class."""
import json
import sys

import numpy as np
import torch

from walnet import imaging
from walnet.data import SyntheticSpec, generate_synthetic, split
from walnet.model import images_to_batch, load_checkpoint

ckpt = sys.argv[1] if len(sys.argv) > 1 else "diag3_checkpoint.bin"
model, meta = load_checkpoint(ckpt, sidecar_path="diag3_config.json")
records = generate_synthetic(SyntheticSpec(seed=0))
_, _, te = split(records, (0.6, 0.2, 0.2), seed=0)

stats = {c: {f"a{i}": [] for i in (1, 2, 3)} for c in range(3)}
for rec in te:
    with torch.no_grad():
        out = model(images_to_batch([rec.image]))
    att = out.attention_set(0)
    for i, amap in enumerate(att.maps(), start=1):
        up = imaging.resize_bilinear(amap, 64, 64)
        inside = float(up[rec.gt_mask > 0].mean())
        outside = float(up[rec.gt_mask == 0].mean())
        stats[rec.label][f"a{i}"].append(inside / max(outside, 1e-9))

out = {}
for c, name in enumerate(("hyper", "hypo", "mixed")):
    out[name] = {k: round(float(np.mean(v)), 3) for k, v in stats[c].items()}
print(json.dumps(out, indent=2))
