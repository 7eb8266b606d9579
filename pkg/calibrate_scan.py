"""Scan synthetic-generator variants for pseudo-mask quality."""
import json
import sys
import time

import numpy as np
import torch

from walnet.data import SyntheticSpec, generate_synthetic, split
from walnet.metrics import dice_coefficient
from walnet.model import ModelConfig, images_to_batch
from walnet.pgm import PgmConfig, SuperpixelCache, generate_pseudo_mask
from walnet.training import TrainConfig, train, evaluate

VARIANTS = {
    "A": dict(background_intensity=0.52, radius_frac_range=(0.14, 0.24),
              wall_intensity=0.75),
    "B": dict(background_intensity=0.52, radius_frac_range=(0.16, 0.24),
              wall_intensity=0.68),
    "C": dict(radius_frac_range=(0.16, 0.24)),
}

name = sys.argv[1]
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 12
t0 = time.time()
spec = SyntheticSpec(seed=0, **VARIANTS[name])
records = generate_synthetic(spec)
cfg = TrainConfig(epochs=epochs, seed=0, model=ModelConfig(input_size=64),
                  pgm=PgmConfig())
tr, va, te = split(records, cfg.ratios, seed=0)
result = train(cfg, tr, va)
model = result.model

cache = SuperpixelCache(cfg.pgm)
per_class = {c: [] for c in range(3)}
seg_class = {c: [] for c in range(3)}
with torch.no_grad():
    for rec in te:
        out = model(images_to_batch([rec.image]))
        pm = generate_pseudo_mask(rec.image, out.attention_set(0), cfg.pgm,
                                  labels=cache.get(rec.sample_id, rec.image))
        per_class[rec.label].append(dice_coefficient(pm.mask, rec.gt_mask))
        seg_class[rec.label].append(
            dice_coefficient(out.seg_prob[0, 0].numpy() >= 0.5, rec.gt_mask))
report = evaluate(model, te)
print(json.dumps({
    "variant": name, "epochs": epochs,
    "acc": report.accuracy, "dice": report.dice,
    "pm_by_class": {c: round(float(np.mean(v)), 3)
                    for c, v in per_class.items()},
    "seg_by_class": {c: round(float(np.mean(v)), 3)
                     for c, v in seg_class.items()},
    "minutes": round((time.time() - t0) / 60, 2),
}), flush=True)
