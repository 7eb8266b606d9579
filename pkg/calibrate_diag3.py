"""30-epoch diagnostic with per-class pseudo-mask quality tracking."""
import json
import time

import numpy as np
import torch

from walnet.data import SyntheticSpec, generate_synthetic, split
from walnet.metrics import dice_coefficient
from walnet.model import ModelConfig, images_to_batch, save_checkpoint
from walnet.pgm import PgmConfig, SuperpixelCache, generate_pseudo_mask, fuse_attention
from walnet.training import TrainConfig, train, evaluate

t0 = time.time()
records = generate_synthetic(SyntheticSpec(seed=0))
cfg = TrainConfig(epochs=30, seed=0, model=ModelConfig(input_size=64),
                  pgm=PgmConfig())
tr, va, te = split(records, cfg.ratios, seed=0)
result = train(cfg, tr, va,
               log_fn=lambda m: print(f"{time.time()-t0:6.1f}s {m}", flush=True))
model = result.model
save_checkpoint(model, "diag3_checkpoint.bin", seed=0,
                sidecar_path="diag3_config.json")

cache = SuperpixelCache(cfg.pgm)
stats = {c: {"pm": [], "seg": [], "att_in": [], "att_out": []} for c in range(3)}
with torch.no_grad():
    for rec in te:
        out = model(images_to_batch([rec.image]))
        pm = generate_pseudo_mask(rec.image, out.attention_set(0), cfg.pgm,
                                  labels=cache.get(rec.sample_id, rec.image))
        fused = fuse_attention(out.attention_set(0))
        s = stats[rec.label]
        s["pm"].append(dice_coefficient(pm.mask, rec.gt_mask))
        s["seg"].append(dice_coefficient(out.seg_prob[0, 0].numpy() >= 0.5,
                                         rec.gt_mask))
        s["att_in"].append(float(fused[rec.gt_mask > 0].mean()))
        s["att_out"].append(float(fused[rec.gt_mask == 0].mean()))

report = evaluate(model, te)
out = {"test_accuracy": report.accuracy, "report_dice": report.dice,
       "best_epoch": result.best_epoch,
       "minutes": round((time.time() - t0) / 60, 2)}
for c, name in enumerate(("hyper", "hypo", "mixed")):
    s = stats[c]
    out[name] = {k: round(float(np.mean(v)), 4) for k, v in s.items()}
    out[name]["pm_min"] = round(float(np.min(s["pm"])), 4)
print(json.dumps(out, indent=2), flush=True)
