"""Diagnostic calibration: does attention localize and do pseudo-masks track GT?"""
import json
import time

import numpy as np
import torch

from walnet.data import SyntheticSpec, generate_synthetic, split
from walnet.metrics import dice_coefficient
from walnet.model import ModelConfig, images_to_batch
from walnet.pgm import PgmConfig, SuperpixelCache, generate_pseudo_mask
from walnet.training import TrainConfig, train, evaluate

t0 = time.time()
records = generate_synthetic(SyntheticSpec(seed=0))
cfg = TrainConfig(epochs=15, seed=0, model=ModelConfig(input_size=64),
                  pgm=PgmConfig())
tr, va, te = split(records, cfg.ratios, seed=0)
result = train(cfg, tr, va,
               log_fn=lambda m: print(f"{time.time()-t0:6.1f}s {m}", flush=True))

model = result.model
cache = SuperpixelCache(cfg.pgm)
pm_dice, seg_dice, att_in, att_out = [], [], [], []
with torch.no_grad():
    for rec in te[:60]:
        out = model(images_to_batch([rec.image]))
        pm = generate_pseudo_mask(rec.image, out.attention_set(0), cfg.pgm,
                                  labels=cache.get(rec.sample_id, rec.image))
        pm_dice.append(dice_coefficient(pm.mask, rec.gt_mask))
        seg_dice.append(dice_coefficient(
            out.seg_prob[0, 0].numpy() >= 0.5, rec.gt_mask))
        from walnet.pgm import fuse_attention
        fused = fuse_attention(out.attention_set(0))
        att_in.append(float(fused[rec.gt_mask > 0].mean()))
        att_out.append(float(fused[rec.gt_mask == 0].mean()))

report = evaluate(model, te)
print(json.dumps({
    "best_val_acc": result.best_val_accuracy,
    "test_accuracy": report.accuracy,
    "pseudo_mask_dice_mean": float(np.mean(pm_dice)),
    "seg_dice_mean": float(np.mean(seg_dice)),
    "report_dice": report.dice,
    "fused_attention_inside_lesion": float(np.mean(att_in)),
    "fused_attention_outside_lesion": float(np.mean(att_out)),
    "minutes": round((time.time()-t0)/60, 2),
}, indent=2), flush=True)
