"""Command-line entry point.

Subcommands: synth, train, eval, experiment, ablate, roi-compare,
pgm-preview. Runs are configured by a JSON file (unknown keys rejected,
schema_version checked) with a few CLI flag overrides; the fully resolved
configuration is persisted as config.resolved.json in the output directory so
any run can be reproduced exactly.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import imaging, training
from .data import SyntheticSpec, generate_synthetic, load_dataset, save_dataset, split
from .model import ModelConfig, load_checkpoint
from .pgm import PgmConfig, render_preview
from .rcm import RoiParams, STRATEGIES
from .training import TrainConfig

SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def _section_fields(cls, drop=()):
    return {f.name for f in dataclasses.fields(cls)} - set(drop)


_SECTIONS = {
    "synth": _section_fields(SyntheticSpec),
    "train": {"epochs", "batch_size", "lr", "seed", "ratios"},
    "model": _section_fields(ModelConfig, drop=("roi",)),
    "pgm": _section_fields(PgmConfig),
    "roi": _section_fields(RoiParams, drop=("strategy",)),
}
_TOP_KEYS = {"schema_version", "roi_strategy", *_SECTIONS}


def load_config(path) -> dict:
    """Read and schema-check a config JSON file."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError("config root must be a JSON object")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise UsageError(f"unsupported schema_version {version} "
                         f"(expected {SCHEMA_VERSION})")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for section, allowed in _SECTIONS.items():
        body = raw.get(section, {})
        if not isinstance(body, dict):
            raise UsageError(f"config section {section!r} must be an object")
        bad = set(body) - allowed
        if bad:
            raise UsageError(
                f"unknown keys in {section!r}: {sorted(bad)} "
                f"(allowed: {sorted(allowed)})")
    strategy = raw.get("roi_strategy", "dilated_crop")
    if strategy not in STRATEGIES:
        raise UsageError(f"invalid value for roi_strategy: {strategy!r} "
                         f"(choose from {', '.join(STRATEGIES)})")
    return raw


def _tupled(d: dict, keys) -> dict:
    d = dict(d)
    for key in keys:
        if key in d and d[key] is not None:
            d[key] = tuple(tuple(v) if isinstance(v, list) else v
                           for v in d[key]) if key == "output_sizes" \
                else tuple(d[key])
    return d


def resolve_configs(raw: dict, args) -> tuple[TrainConfig, SyntheticSpec]:
    """Materialize dataclass configs from the JSON dict plus flag overrides."""
    strategy = raw.get("roi_strategy", "dilated_crop")
    if getattr(args, "roi_strategy", None):
        strategy = args.roi_strategy
        if strategy not in STRATEGIES:
            raise UsageError(f"invalid value for roi_strategy: {strategy!r} "
                             f"(choose from {', '.join(STRATEGIES)})")
    try:
        roi = RoiParams(strategy=strategy,
                        **_tupled(raw.get("roi", {}), ["output_sizes"]))
        model = ModelConfig(roi=roi,
                            **_tupled(raw.get("model", {}), ["widths", "blocks"]))
        cfg = TrainConfig(model=model, pgm=PgmConfig(**raw.get("pgm", {})),
                          **_tupled(raw.get("train", {}), ["ratios"]))
        synth = SyntheticSpec(**_tupled(raw.get("synth", {}),
                                        ["counts", "radius_frac_range"]))
        if getattr(args, "seed", None) is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
            synth = dataclasses.replace(synth, seed=args.seed)
        if getattr(args, "epochs", None) is not None:
            cfg = dataclasses.replace(cfg, epochs=args.epochs)
        cfg.validate()
        synth.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg, synth


def write_resolved(out_dir, cfg: TrainConfig, synth: SyntheticSpec):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {
        "schema_version": SCHEMA_VERSION,
        "synth": synth.to_dict(),
        "train": {"epochs": cfg.epochs, "batch_size": cfg.batch_size,
                  "lr": cfg.lr, "seed": cfg.seed, "ratios": list(cfg.ratios)},
        "model": cfg.model.to_dict(),
        "pgm": dataclasses.asdict(cfg.pgm),
        "roi_strategy": cfg.model.roi.strategy,
    }
    (out_dir / "config.resolved.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True, default=str))


def build_parser() -> _Parser:
    parser = _Parser(prog="walnet",
                     description="Weakly supervised auxiliary-task learning "
                                 "for plaque ultrasound classification")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, help_text, needs_config=True, needs_data=True, needs_out=True):
        p = sub.add_parser(name, help=help_text)
        if needs_config:
            p.add_argument("--config", type=str, default=None,
                           help="JSON config file (defaults used if omitted)")
        if needs_data:
            p.add_argument("--data", type=str, required=True,
                           help="dataset directory")
        if needs_out:
            p.add_argument("--out", type=str, required=True,
                           help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = add("synth", "generate a synthetic dataset", needs_data=False)
    p.add_argument("--workers", type=int, default=1)

    p = add("train", "train one model on a dataset")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--roi-strategy", type=str, default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--split", type=str, default="test",
                   choices=["train", "val", "test", "all"])
    p.add_argument("--out", type=str, required=True)
    p.add_argument("-v", "--verbose", action="store_true")

    p = add("experiment", "multi-seed experiment with aggregate report")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--roi-strategy", type=str, default=None)

    p = add("ablate", "module ablation (3 variants)")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=None)

    p = add("roi-compare", "compare the five ROI strategies")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("pgm-preview",
                       help="render superpixel/attention/pseudo-mask triplets")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--split", type=str, default="test",
                   choices=["train", "val", "test", "all"])
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _log_fn(args):
    return (lambda msg: print(msg, flush=True)) if getattr(args, "verbose", False) \
        else None


def _load_split(data_dir, cfg: TrainConfig):
    records = load_dataset(data_dir)
    return split(records, cfg.ratios, seed=cfg.seed)


def _cmd_synth(args):
    raw = load_config(args.config) if args.config else {}
    _, synth = resolve_configs(raw, args)
    records = generate_synthetic(synth, workers=args.workers)
    save_dataset(records, args.out, spec=synth)
    cfg, _ = resolve_configs(raw, args)
    write_resolved(args.out, cfg, synth)
    print(f"wrote {len(records)} samples to {args.out}")
    return 0


def _cmd_train(args):
    raw = load_config(args.config) if args.config else {}
    cfg, synth = resolve_configs(raw, args)
    write_resolved(args.out, cfg, synth)
    train_recs, val_recs, test_recs = _load_split(args.data, cfg)
    result = training.train(cfg, train_recs, val_recs, out_dir=args.out,
                            log_fn=_log_fn(args))
    report = training.evaluate(result.model, test_recs, out_dir=args.out,
                               batch_size=cfg.batch_size)
    print(f"best val accuracy {result.best_val_accuracy:.4f} "
          f"(epoch {result.best_epoch}); test accuracy {report.accuracy:.4f}")
    return 0


def _cmd_eval(args):
    model, meta = load_checkpoint(args.checkpoint)
    records = load_dataset(args.data)
    if args.split != "all":
        train_cfg = meta.get("train", {})
        parts = split(records, tuple(train_cfg.get("ratios", (0.6, 0.2, 0.2))),
                      seed=train_cfg.get("seed", meta.get("seed", 0)))
        records = dict(zip(("train", "val", "test"), parts))[args.split]
    report = training.evaluate(model, records, out_dir=args.out)
    print(f"{args.split} accuracy {report.accuracy:.4f} "
          f"(n={int(report.confusion.sum())})")
    return 0


def _cmd_experiment(args, runner=training.run_experiment):
    raw = load_config(args.config) if args.config else {}
    cfg, synth = resolve_configs(raw, args)
    write_resolved(args.out, cfg, synth)
    records = load_dataset(args.data)
    result = runner(cfg, records, n_seeds=args.seeds, out_root=args.out,
                    log_fn=_log_fn(args))
    if "table_md" in result:
        print(result["table_md"])
    else:
        print(training.render_table([(result["name"], result)]))
    return 0


def _cmd_pgm_preview(args):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.image as mimage
    from PIL import Image

    model, meta = load_checkpoint(args.checkpoint)
    pgm_cfg = PgmConfig(**meta.get("pgm", {}))
    records = load_dataset(args.data)
    if args.split != "all":
        train_cfg = meta.get("train", {})
        parts = split(records, tuple(train_cfg.get("ratios", (0.6, 0.2, 0.2))),
                      seed=train_cfg.get("seed", meta.get("seed", 0)))
        records = dict(zip(("train", "val", "test"), parts))[args.split]
    out_dir = Path(args.out) / "previews"
    out_dir.mkdir(parents=True, exist_ok=True)

    from .model import images_to_batch
    import torch
    for rec in records[:args.n]:
        with torch.no_grad():
            out = model(images_to_batch([rec.image]))
        overlay, fused, mask = render_preview(rec.image, out.attention_set(0),
                                              pgm_cfg)
        Image.fromarray((overlay * 255).astype(np.uint8)).save(
            out_dir / f"{rec.sample_id}_superpixels.png")
        mimage.imsave(out_dir / f"{rec.sample_id}_attention.png", fused,
                      cmap="inferno", vmin=0.0, vmax=max(float(fused.max()), 1e-9))
        imaging.save_mask_png(mask, out_dir / f"{rec.sample_id}_pseudo_mask.png")
    print(f"wrote previews for {min(args.n, len(records))} samples to {out_dir}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "experiment": lambda a: _cmd_experiment(a, training.run_experiment),
    "ablate": lambda a: _cmd_experiment(a, training.run_ablation),
    "roi-compare": lambda a: _cmd_experiment(a, training.run_roi_comparison),
    "pgm-preview": _cmd_pgm_preview,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 0
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
