"""One-off calibration run for the end-to-end synthetic experiment."""
import json
import time

from walnet.data import SyntheticSpec, generate_synthetic, split
from walnet.model import ModelConfig
from walnet.pgm import PgmConfig
from walnet.training import TrainConfig, train, evaluate

t0 = time.time()
spec = SyntheticSpec(seed=0)  # (240, 480, 280) at 64x64
records = generate_synthetic(spec)
print(f"dataset generated in {time.time()-t0:.1f}s", flush=True)

cfg = TrainConfig(
    epochs=30, seed=0,
    model=ModelConfig(input_size=64),
    pgm=PgmConfig(),
)
train_recs, val_recs, test_recs = split(records, cfg.ratios, seed=cfg.seed)
print(f"split {len(train_recs)}/{len(val_recs)}/{len(test_recs)}", flush=True)

t1 = time.time()
result = train(cfg, train_recs, val_recs,
               log_fn=lambda m: print(f"{time.time()-t1:7.1f}s {m}", flush=True))
print(f"train time {time.time()-t1:.1f}s", flush=True)
report = evaluate(result.model, test_recs)
print(json.dumps({
    "best_val_acc": result.best_val_accuracy,
    "best_epoch": result.best_epoch,
    "test_accuracy": report.accuracy,
    "test_dice": report.dice,
    "micro_auc": report.micro_auc,
    "total_minutes": round((time.time()-t0)/60, 2),
}, indent=2), flush=True)
