"""Training loop, evaluation artifacts, multi-seed experiments, ablation and
ROI-strategy comparison harnesses.

Every run is deterministic given its resolved config and seed: model init is
driven by torch's seeded RNG, epoch shuffles by a numpy RNG keyed on
(seed, epoch), and pseudo-masks are pure functions of the sample and the
current attention maps.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np
import torch

from . import metrics as metrics_mod
from .data import CLASS_NAMES, SampleRecord, split
from .losses import classification_loss, segmentation_loss, total_loss
from .model import (ModelConfig, WalNet, images_to_batch, load_checkpoint,
                    save_checkpoint)
from .pgm import PgmConfig, SuperpixelCache, generate_pseudo_mask


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-4
    seed: int = 0
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    model: ModelConfig = field(default_factory=ModelConfig)
    pgm: PgmConfig = field(default_factory=PgmConfig)

    def validate(self) -> "TrainConfig":
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        self.model.validate()
        self.pgm.validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelConfig.from_dict(d.pop("model", {}))
        pgm = PgmConfig(**d.pop("pgm", {}))
        return cls(model=model, pgm=pgm, ratios=tuple(d.pop("ratios", (0.6, 0.2, 0.2))),
                   **d).validate()


@dataclass
class TrainResult:
    model: WalNet
    history: list[dict]
    best_val_accuracy: float
    best_epoch: int
    checkpoint_path: Path | None
    config: TrainConfig


def _pseudo_mask_batch(images, output, cache: SuperpixelCache, cfg: PgmConfig,
                       sample_ids) -> torch.Tensor:
    masks = []
    for i, (img, sid) in enumerate(zip(images, sample_ids)):
        labels = cache.get(sid, img)
        pm = generate_pseudo_mask(img, output.attention_set(i), cfg,
                                  labels=labels, provenance={"sample": sid})
        masks.append(pm.mask.astype(np.float32)[None])
    return torch.from_numpy(np.stack(masks))


def train(cfg: TrainConfig, train_records: list[SampleRecord],
          val_records: list[SampleRecord], out_dir=None,
          spx_cache: SuperpixelCache | None = None,
          log_fn=None) -> TrainResult:
    """Train one model; keep the best-validation-accuracy parameters."""
    cfg.validate()
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(cfg.seed)
    model = WalNet(cfg.model)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    cache = spx_cache if spx_cache is not None else SuperpixelCache(cfg.pgm)
    use_aux = cfg.model.use_aux_seg and cfg.model.use_attention_gates

    history: list[dict] = []
    best_acc, best_epoch, best_state = -1.0, -1, None
    n = len(train_records)
    t0 = time.time()
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        model.train()
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            batch = [train_records[i] for i in order[start:start + cfg.batch_size]]
            images = [rec.image for rec in batch]
            x = images_to_batch(images)
            labels = torch.tensor([rec.label for rec in batch], dtype=torch.long)
            output = model(x)
            if use_aux:
                ids = [rec.sample_id for rec in batch]
                masks = _pseudo_mask_batch(images, output, cache, cfg.pgm, ids)
                seg = segmentation_loss(output.seg_prob, masks)
            else:
                seg = torch.zeros((), dtype=torch.float64)
            cls = classification_loss(output.class_logits, labels)
            bundle = total_loss(seg, cls, batch_id=f"epoch{epoch}/step{step}")
            optimizer.zero_grad()
            bundle.total.backward()
            optimizer.step()
            history.append({"type": "step", "epoch": epoch, "step": step,
                            **bundle.as_floats()})

        val_acc = accuracy_on(model, val_records, cfg.batch_size)
        history.append({"type": "epoch", "epoch": epoch,
                        "val_accuracy": val_acc,
                        "elapsed_s": round(time.time() - t0, 3)})
        if log_fn:
            log_fn(f"epoch {epoch}: val_acc={val_acc:.4f}")
        # strictly-better: among equal validation scores the earliest epoch
        # wins, which lands near the attention peak before late-training drift
        if val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_state = {k: v.detach().clone()
                          for k, v in model.state_dict().items()}

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()

    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "history.jsonl", "w") as fh:
            for row in history:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        checkpoint_path = save_checkpoint(
            model, out_dir / "checkpoint.bin", seed=cfg.seed,
            extra={"train": _train_dict(cfg), "pgm": asdict(cfg.pgm),
                   "best_val_accuracy": best_acc, "best_epoch": best_epoch})
    return TrainResult(model=model, history=history, best_val_accuracy=best_acc,
                       best_epoch=best_epoch, checkpoint_path=checkpoint_path,
                       config=cfg)


def _train_dict(cfg: TrainConfig) -> dict:
    return {"epochs": cfg.epochs, "batch_size": cfg.batch_size, "lr": cfg.lr,
            "seed": cfg.seed, "ratios": list(cfg.ratios)}


def predict(model: WalNet, records: list[SampleRecord], batch_size: int = 8):
    """Inference pass: labels, argmax predictions, softmax scores, dice, boxes."""
    model.eval()
    y_true, y_pred, scores, boxes = [], [], [], []
    dices = []
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            batch = records[start:start + batch_size]
            x = images_to_batch([rec.image for rec in batch])
            out = model(x)
            probs = torch.softmax(out.class_logits, dim=1).cpu().numpy()
            scores.append(probs)
            y_pred.extend(int(i) for i in probs.argmax(axis=1))
            y_true.extend(rec.label for rec in batch)
            boxes.extend(out.roi_boxes)
            if out.seg_prob is not None:
                seg = (out.seg_prob[:, 0].cpu().numpy() >= 0.5)
                for rec, pred_mask in zip(batch, seg):
                    if rec.gt_mask is not None:
                        dices.append(metrics_mod.dice_coefficient(
                            pred_mask, rec.gt_mask))
    dice = float(np.mean(dices)) if dices else None
    return (np.array(y_true), np.array(y_pred), np.concatenate(scores),
            dice, boxes)


def accuracy_on(model: WalNet, records: list[SampleRecord],
                batch_size: int = 8) -> float:
    y_true, y_pred, _, _, _ = predict(model, records, batch_size)
    return float((y_true == y_pred).mean()) if y_true.size else 0.0


def evaluate(model: WalNet, records: list[SampleRecord], out_dir=None,
             batch_size: int = 8) -> metrics_mod.MetricsReport:
    """Run inference and emit the metrics bundle plus plot/CSV artifacts."""
    if not records:
        raise ValueError("cannot evaluate on an empty split")
    y_true, y_pred, scores, dice, boxes = predict(model, records, batch_size)
    cm = metrics_mod.confusion_matrix(y_true, y_pred, model.cfg.num_classes)
    report = metrics_mod.compute_metrics(cm, y_true=y_true, scores=scores,
                                         dice=dice)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.json").write_text(report.to_json())
        _write_confusion(cm, out_dir)
        _write_rocs(y_true, scores, out_dir, model.cfg.num_classes)
        with open(out_dir / "roi_boxes.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "row0", "col0", "row1", "col1"])
            for rec, box in zip(records, boxes):
                writer.writerow([rec.sample_id, box.row0, box.col0,
                                 box.row1, box.col1])
    return report


def _write_confusion(cm: np.ndarray, out_dir: Path):
    names = CLASS_NAMES[:cm.shape[0]]
    with open(out_dir / "confusion.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred", *names])
        for name, row in zip(names, cm):
            writer.writerow([name, *row.tolist()])
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(cm, cmap="Blues")
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center")
    ax.set_xticks(range(len(names)), names, rotation=30)
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.tight_layout()
    fig.savefig(out_dir / "confusion.png", dpi=120)
    plt.close(fig)


def _write_rocs(y_true, scores, out_dir: Path, n_classes: int):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    names = list(CLASS_NAMES[:n_classes])
    onehot = np.eye(n_classes, dtype=bool)[y_true]
    curves = [(name, y_true == c, scores[:, c]) for c, name in enumerate(names)]
    curves.append(("micro", onehot.ravel(), scores.ravel()))
    for name, y_bin, s in curves:
        fpr, tpr, thr = metrics_mod.roc_curve(y_bin, s)
        auc = metrics_mod.auc_trapezoid(fpr, tpr)
        with open(out_dir / f"roc_{name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fpr", "tpr", "threshold"])
            for row in zip(fpr, tpr, thr):
                writer.writerow(row)
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.plot(fpr, tpr, label=f"AUC={auc:.3f}")
        ax.plot([0, 1], [0, 1], "k--", lw=0.8)
        ax.set_xlabel("FPR")
        ax.set_ylabel("TPR")
        ax.set_title(f"ROC ({name})")
        ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(out_dir / f"roc_{name}.png", dpi=120)
        plt.close(fig)


def format_cell(mean: float, std: float) -> str:
    """Table cell in the conventional "mean (std)" rendering."""
    return f"{mean:.4f} ({std:.3f})"


def run_experiment(cfg: TrainConfig, records: list[SampleRecord],
                   n_seeds: int = 5, out_root=None, name: str = "walnet",
                   log_fn=None) -> dict:
    """Train/evaluate over n seeds; each seed reshuffles the split and reinits."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    cfg.validate()
    seeds = [cfg.seed + i for i in range(n_seeds)]
    per_seed = []
    for i, seed in enumerate(seeds):
        run_cfg = replace(cfg, seed=seed)
        train_recs, val_recs, test_recs = split(records, cfg.ratios, seed=seed)
        seed_dir = Path(out_root) / f"seed{i}" if out_root is not None else None
        if log_fn:
            log_fn(f"[{name}] seed {seed} "
                   f"({len(train_recs)}/{len(val_recs)}/{len(test_recs)})")
        result = train(run_cfg, train_recs, val_recs, out_dir=seed_dir,
                       log_fn=log_fn)
        report = evaluate(result.model, test_recs, out_dir=seed_dir,
                          batch_size=cfg.batch_size)
        row = report.to_dict()
        row["seed"] = seed
        row["best_val_accuracy"] = result.best_val_accuracy
        per_seed.append(row)

    summary = {"name": name, "seeds": seeds, "per_seed": per_seed,
               "metrics": {}, "cells": {}}
    for col in metrics_mod.MetricsReport.METRIC_COLUMNS:
        vals = np.array([row[col] for row in per_seed], dtype=np.float64)
        mean, std = float(vals.mean()), float(vals.std(ddof=0))
        summary["metrics"][col] = {"mean": mean, "std": std,
                                   "values": vals.tolist()}
        summary["cells"][col] = format_cell(mean, std)
    dice_vals = [row["dice"] for row in per_seed if row.get("dice") is not None]
    if dice_vals:
        summary["metrics"]["dice"] = {"mean": float(np.mean(dice_vals)),
                                      "std": float(np.std(dice_vals)),
                                      "values": dice_vals}
    if out_root is not None:
        out_root = Path(out_root)
        out_root.mkdir(parents=True, exist_ok=True)
        (out_root / "report.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True))
        (out_root / "report.md").write_text(render_table([(name, summary)]))
    return summary


_TABLE_HEADER = ("| Method | Accuracy | F1-score | Kappa | Precision | Recall |\n"
                 "|---|---|---|---|---|---|\n")


def render_table(rows: list[tuple[str, dict]]) -> str:
    lines = [_TABLE_HEADER]
    for label, summary in rows:
        cells = summary["cells"]
        lines.append("| " + " | ".join(
            [label] + [cells[c] for c in metrics_mod.MetricsReport.METRIC_COLUMNS])
            + " |\n")
    return "".join(lines)


ABLATION_VARIANTS = (
    # label, attention gates, aux segmentation task, roi strategy
    ("w/o RCM & PGM", False, False, "none"),
    ("w/o RCM", True, True, "none"),
    ("WAL-Net", True, True, "dilated_crop"),
)

ROI_COMPARISON_ROWS = (
    ("rwm", "rwm"),
    ("bg rm", "bg_rm"),
    ("bg rm & crop", "bg_rm_crop"),
    ("crop", "crop"),
    ("dilated crop", "dilated_crop"),
)


def _variant_config(cfg: TrainConfig, gates: bool, aux: bool,
                    strategy: str) -> TrainConfig:
    model = replace(cfg.model, use_attention_gates=gates, use_aux_seg=aux,
                    roi=replace(cfg.model.roi, strategy=strategy))
    return replace(cfg, model=model)


def run_ablation(cfg: TrainConfig, records: list[SampleRecord],
                 n_seeds: int = 5, out_root=None, log_fn=None) -> dict:
    """Module ablation: plain classifier, +attention+aux task, full model."""
    rows = []
    for label, gates, aux, strategy in ABLATION_VARIANTS:
        sub = Path(out_root) / label.replace(" ", "_").replace("&", "and") \
            if out_root is not None else None
        variant_cfg = _variant_config(cfg, gates, aux, strategy)
        rows.append((label, run_experiment(variant_cfg, records, n_seeds,
                                           out_root=sub, name=label,
                                           log_fn=log_fn)))
    return _finish_comparison(rows, out_root, "ablation")


def run_roi_comparison(cfg: TrainConfig, records: list[SampleRecord],
                       n_seeds: int = 5, out_root=None, log_fn=None) -> dict:
    """The five ROI strategies under identical seeds and data."""
    rows = []
    for label, strategy in ROI_COMPARISON_ROWS:
        sub = Path(out_root) / strategy if out_root is not None else None
        variant_cfg = _variant_config(cfg, cfg.model.use_attention_gates, True,
                                      strategy)
        rows.append((label, run_experiment(variant_cfg, records, n_seeds,
                                           out_root=sub, name=label,
                                           log_fn=log_fn)))
    return _finish_comparison(rows, out_root, "roi_comparison")


def _finish_comparison(rows, out_root, kind: str) -> dict:
    seed_sets = {tuple(summary["seeds"]) for _, summary in rows}
    if len(seed_sets) != 1:
        raise RuntimeError(f"variants ran with different seeds: {seed_sets}")
    table = render_table(rows)
    result = {"kind": kind, "seeds": rows[0][1]["seeds"],
              "rows": [{"label": label, **summary} for label, summary in rows],
              "table_md": table}
    if out_root is not None:
        out_root = Path(out_root)
        out_root.mkdir(parents=True, exist_ok=True)
        (out_root / "report.md").write_text(table)
        (out_root / "report.json").write_text(
            json.dumps(result, indent=2, sort_keys=True))
    return result


def evaluate_checkpoint(checkpoint_path, records, out_dir=None,
                        batch_size: int = 8):
    """Load a saved model and evaluate it on the given records."""
    model, meta = load_checkpoint(checkpoint_path)
    return evaluate(model, records, out_dir=out_dir, batch_size=batch_size), meta
