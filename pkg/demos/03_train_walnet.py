"""Train a small WAL-Net on synthetic data and inspect what it learned.

A short run on a reduced dataset: classification accuracy, decoder Dice
against the generator's ground-truth masks, and a gallery of segmentation
predictions next to the pseudo-masks that supervised them. Expect a few
minutes on a laptop CPU; scale counts/epochs up for better masks.
"""

import json
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import torch

from walnet.data import SyntheticSpec, generate_synthetic, split
from walnet.model import ModelConfig, images_to_batch
from walnet.pgm import PgmConfig, SuperpixelCache, generate_pseudo_mask
from walnet.training import TrainConfig, evaluate, train

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

records = generate_synthetic(SyntheticSpec(counts=(72, 144, 84), seed=0))
cfg = TrainConfig(epochs=12, seed=0, model=ModelConfig(input_size=64),
                  pgm=PgmConfig())
train_recs, val_recs, test_recs = split(records, cfg.ratios, seed=cfg.seed)

result = train(cfg, train_recs, val_recs, out_dir=out_dir / "run",
               log_fn=print)
report = evaluate(result.model, test_recs, out_dir=out_dir / "run")
print(json.dumps({"test_accuracy": report.accuracy,
                  "decoder_dice": report.dice,
                  "micro_auc": report.micro_auc}, indent=2))

# gallery: image / pseudo-mask / decoder prediction / GT
model = result.model
cache = SuperpixelCache(cfg.pgm)
fig, axes = plt.subplots(4, 4, figsize=(10, 10))
for col, rec in enumerate(test_recs[:4]):
    with torch.no_grad():
        out = model(images_to_batch([rec.image]))
    pm = generate_pseudo_mask(rec.image, out.attention_set(0), cfg.pgm,
                              labels=cache.get(rec.sample_id, rec.image))
    rows = [(rec.image, "input", "gray"), (pm.mask, "pseudo-mask", "gray"),
            (out.seg_prob[0, 0].numpy(), "decoder prob", "inferno"),
            (rec.gt_mask, "GT", "gray")]
    for row, (im, title, cmap) in enumerate(rows):
        axes[row, col].imshow(im, cmap=cmap)
        axes[row, col].axis("off")
        if col == 0:
            axes[row, col].set_ylabel(title)
        if row == 0:
            axes[row, col].set_title(rec.sample_id)
fig.tight_layout()
fig.savefig(out_dir / "training_gallery.png", dpi=130)
print(f"artifacts under {out_dir / 'run'}; gallery at "
      f"{out_dir / 'training_gallery.png'}")
