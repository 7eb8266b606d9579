"""Dataset plumbing: preprocessing, a synthetic ultrasound-like generator,
deterministic stratified splits, and on-disk dataset layout.

The synthetic generator stands in for the clinical dataset: speckle-textured
background, bright vessel-wall bands top and bottom, and one elliptical
lesion whose interior intensity encodes the class (bright / dark / half-and-
half). Classes are cleanly separable from the mean intensity *inside* the
ground-truth ellipse but not from whole-image statistics, so a classifier
benefits from localizing the lesion.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import imaging
from .imaging import BBox

CLASS_NAMES = ("hyperechoic", "hypoechoic", "mixed")


@dataclass
class SampleRecord:
    sample_id: str
    image: np.ndarray
    label: int
    roi_box: BBox | None = None
    gt_mask: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


@dataclass
class SyntheticSpec:
    """Generator parameters; defaults mirror the clinical class imbalance."""

    counts: tuple[int, int, int] = (240, 480, 280)  # hyper / hypo / mixed
    size: int = 64
    hyper_intensity: float = 0.80
    hypo_intensity: float = 0.25
    # midpoint of the two lesion intensities: bright and dark lesions are then
    # equally salient, and whole-image statistics cannot tell them apart
    background_intensity: float = 0.525
    wall_intensity: float = 0.72
    speckle_std: float = 0.07
    radius_frac_range: tuple[float, float] = (0.16, 0.24)
    seed: int = 0

    def validate(self) -> "SyntheticSpec":
        if len(self.counts) != 3 or any(c < 1 for c in self.counts):
            raise ValueError(f"counts must be 3 ints >= 1, got {self.counts}")
        if self.size < 32:
            raise ValueError(f"size must be >= 32, got {self.size}")
        lo, hi = self.radius_frac_range
        if not 0 < lo <= hi < 0.25:
            raise ValueError(f"radius_frac_range must satisfy 0 < lo <= hi < 0.25, "
                             f"got {self.radius_frac_range}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        return cls(counts=tuple(d.pop("counts")),
                   radius_frac_range=tuple(d.pop("radius_frac_range")),
                   **d).validate()


def preprocess(image: np.ndarray, expert_box: BBox, out_size: int = 224) -> np.ndarray:
    """Crop the expert ROI and bilinear-resize it to the network input size.

    Accepts uint8 (0-255) or float ([0,1]) images; returns float32 in [0,1].
    """
    image = np.asarray(image)
    if np.issubdtype(image.dtype, np.integer):
        image = image.astype(np.float64) / 255.0
    imaging.validate_image(image)
    expert_box.check_within(image.shape[0], image.shape[1])
    crop = image[expert_box.row0:expert_box.row1, expert_box.col0:expert_box.col1]
    resized = imaging.resize_image(crop, out_size, out_size)
    return np.clip(resized, 0.0, 1.0).astype(np.float32)


def _make_sample(spec: SyntheticSpec, index: int, label: int) -> SampleRecord:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
    s = spec.size
    rows = np.arange(s)[:, None]
    cols = np.arange(s)[None, :]

    # strong per-sample jitter keeps whole-image statistics uninformative:
    # only the lesion's sign/texture, found locally, identifies the class
    base = spec.background_intensity + rng.uniform(-0.08, 0.08)
    signal = np.full((s, s), base)

    # vessel-wall-like bright bands with a sinusoidal wobble
    thickness = max(int(s * 0.06), 2)
    amp = rng.uniform(0.0, s * 0.02)
    phase = rng.uniform(0.0, 2 * math.pi)
    wobble = amp * np.sin(2 * math.pi * np.arange(s) / s + phase)
    wall_val = spec.wall_intensity + rng.uniform(-0.10, 0.10)
    for anchor in (int(s * 0.06), int(s * 0.90)):
        tops = np.clip(np.round(anchor + wobble).astype(int), 0, s - thickness)
        band = (rows >= tops[None, :]) & (rows < (tops + thickness)[None, :])
        signal[band] = wall_val

    # one elliptical lesion in the central band
    lo, hi = spec.radius_frac_range
    a = rng.uniform(lo, hi) * s
    b = rng.uniform(lo, hi) * s
    cy = rng.uniform(0.38, 0.62) * s
    cx = rng.uniform(0.25, 0.75) * s
    theta = rng.uniform(0.0, math.pi)
    dy = rows - cy
    dx = cols - cx
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    mask = (u / a) ** 2 + (v / b) ** 2 <= 1.0

    bright = spec.hyper_intensity + rng.uniform(-0.03, 0.03)
    dark = spec.hypo_intensity + rng.uniform(-0.03, 0.03)
    if label == 0:
        lesion = np.full((s, s), bright)
    elif label == 1:
        lesion = np.full((s, s), dark)
    else:
        split_theta = rng.uniform(0.0, 2 * math.pi)
        side = (dx * math.cos(split_theta) + dy * math.sin(split_theta)) >= 0
        lesion = np.where(side, bright, dark)
    signal = np.where(mask, lesion, signal)

    noisy = signal + rng.normal(0.0, spec.speckle_std, (s, s))
    image = gaussian_filter(noisy, 0.5, mode="reflect")
    image = np.clip(image, 0.0, 1.0).astype(np.float32)

    return SampleRecord(
        sample_id=f"s{index:05d}",
        image=image,
        label=label,
        gt_mask=mask.astype(np.uint8),
        meta={"ellipse": {"cy": cy, "cx": cx, "a": a, "b": b, "theta": theta}},
    )


def generate_synthetic(spec: SyntheticSpec, workers: int = 1) -> list[SampleRecord]:
    """Deterministic synthetic dataset; sample i depends only on (seed, i).

    Parallel generation is safe (per-sample derived seeds); the worker count
    is capped by the WALNET_NUM_WORKERS environment variable when set.
    """
    spec.validate()
    labels = [c for c, n in enumerate(spec.counts) for _ in range(n)]
    cap = int(os.environ.get("WALNET_NUM_WORKERS", "0") or 0)
    if cap > 0:
        workers = min(workers, cap)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda i: _make_sample(spec, i, labels[i]),
                                 range(len(labels))))
    return [_make_sample(spec, i, lab) for i, lab in enumerate(labels)]


def _apportion(n: int, ratios) -> list[int]:
    """Largest-remainder allocation of n items; ties favor earlier splits."""
    ideal = [n * r for r in ratios]
    counts = [int(x) for x in ideal]
    fracs = [x - c for x, c in zip(ideal, counts)]
    order = sorted(range(len(ratios)), key=lambda i: (-fracs[i], i))
    for i in range(n - sum(counts)):
        counts[order[i]] += 1
    return counts


def split(records: list[SampleRecord], ratios=(0.6, 0.2, 0.2), seed: int = 0,
          group_key: str | None = None):
    """Stratified deterministic train/val/test split.

    ``group_key`` names a meta field (e.g. a patient id); when given, whole
    groups are assigned to a single split so no group straddles two splits.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"need 3 non-negative ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")

    if group_key is not None:
        units: dict = {}
        for rec in records:
            gid = rec.meta.get(group_key, rec.sample_id)
            units.setdefault(gid, []).append(rec)
        unit_list = [(gid, members) for gid, members in units.items()]
        labels = [members[0].label for _, members in unit_list]
    else:
        unit_list = [(rec.sample_id, [rec]) for rec in records]
        labels = [rec.label for rec in records]

    classes = sorted(set(labels))
    for c in classes:
        if labels.count(c) < 3:
            raise ValueError(f"class {c} has fewer than 3 samples")

    rng = np.random.default_rng(seed)
    out: tuple[list, list, list] = ([], [], [])
    for c in classes:
        idx = [i for i, lab in enumerate(labels) if lab == c]
        idx = [idx[p] for p in rng.permutation(len(idx))]
        counts = _apportion(len(idx), ratios)
        pos = 0
        for k, n_k in enumerate(counts):
            for i in idx[pos:pos + n_k]:
                out[k].extend(unit_list[i][1])
            pos += n_k
    return out


def save_dataset(records: list[SampleRecord], out_dir, spec: SyntheticSpec | None = None):
    """Write `images/*.png` (8-bit), `masks/*.png`, `labels.csv`, `manifest.json`."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    has_masks = any(rec.gt_mask is not None for rec in records)
    if has_masks:
        (out_dir / "masks").mkdir(exist_ok=True)

    from PIL import Image
    with open(out_dir / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "label", "row0", "col0", "row1", "col1"])
        for rec in records:
            name = f"{rec.sample_id}.png"
            img8 = np.clip(np.round(np.asarray(rec.image) * 255), 0, 255)
            Image.fromarray(img8.astype(np.uint8), mode="L").save(
                out_dir / "images" / name)
            if rec.gt_mask is not None:
                imaging.save_mask_png(rec.gt_mask, out_dir / "masks" / name)
            box = ["", "", "", ""]
            if rec.roi_box is not None:
                box = [rec.roi_box.row0, rec.roi_box.col0,
                       rec.roi_box.row1, rec.roi_box.col1]
            writer.writerow([name, rec.label, *box])

    manifest = {"schema_version": 1, "class_names": list(CLASS_NAMES),
                "n_samples": len(records)}
    if spec is not None:
        manifest["synthetic_spec"] = spec.to_dict()
        manifest["seed"] = spec.seed
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True))
    return out_dir


def load_dataset(data_dir) -> list[SampleRecord]:
    data_dir = Path(data_dir)
    if not (data_dir / "labels.csv").exists():
        raise ValueError(f"no labels.csv under {data_dir}")
    from PIL import Image
    records = []
    with open(data_dir / "labels.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            name = row["filename"]
            img = np.asarray(Image.open(data_dir / "images" / name),
                             dtype=np.float32) / 255.0
            mask_path = data_dir / "masks" / name
            mask = imaging.load_mask_png(mask_path) if mask_path.exists() else None
            box = None
            if row.get("row0"):
                box = BBox(int(row["row0"]), int(row["col0"]),
                           int(row["row1"]), int(row["col1"]))
            records.append(SampleRecord(sample_id=Path(name).stem, image=img,
                                        label=int(row["label"]), roi_box=box,
                                        gt_mask=mask))
    return records
