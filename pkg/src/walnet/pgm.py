"""Pseudo-mask generation: fuse multi-scale attention, average over superpixels, binarize.

The pseudo-mask is a weak supervision target for the segmentation decoder. It
is rebuilt from the current attention maps every time it is requested, but it
is always a plain numpy array: no gradient can flow through it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import imaging


@dataclass
class PgmConfig:
    """Superpixel + binarization parameters for pseudo-mask generation."""

    felz_k: float = 100.0
    felz_sigma: float = 0.8
    felz_min_size: int = 20
    threshold: float = 0.5

    def validate(self):
        if self.felz_k <= 0 or self.felz_sigma < 0 or self.felz_min_size < 1:
            raise ValueError(f"invalid superpixel parameters {self}")
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must be in (0,1), got {self.threshold}")
        return self


@dataclass
class AttentionSet:
    """Attention maps from the three gated encoder stages (strides 4, 8, 16)."""

    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    source_resolution: tuple[int, int]

    def maps(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.a1, self.a2, self.a3

    def validate(self) -> "AttentionSet":
        for name, m in zip(("a1", "a2", "a3"), self.maps()):
            if m is None:
                raise ValueError(f"attention map {name} is missing")
            m = imaging.validate_scalar_map(m)
            if m.min() < 0.0 or m.max() > 1.0:
                raise ValueError(f"attention map {name} outside [0, 1]")
        h, w = self.source_resolution
        if h < 1 or w < 1:
            raise ValueError(f"bad source resolution {self.source_resolution}")
        return self


@dataclass
class PseudoMask:
    """Binary supervision target at input resolution, constant w.r.t. parameters."""

    mask: np.ndarray
    provenance: dict = field(default_factory=dict)


def fuse_attention(att: AttentionSet) -> np.ndarray:
    """Upsample the three attention maps to input resolution and multiply them.

    Shallow maps contribute contour detail, deep maps contribute localization;
    the product keeps only pixels all levels agree on. Result stays in [0, 1].
    """
    att.validate()
    h, w = att.source_resolution
    fused = np.ones((h, w), dtype=np.float64)
    for m in att.maps():
        fused *= imaging.resize_bilinear(np.asarray(m, dtype=np.float64), h, w)
    return fused


def superpixel_region_average(values: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Replace each pixel by the mean of its superpixel region.

    The mean is computed as ref + mean(values - ref) with ref the region's
    first (row-major) value, so applying the operation twice is exactly
    idempotent: a constant region has all-zero deviations.
    """
    values = imaging.validate_scalar_map(values)
    labels = np.asarray(labels)
    if labels.shape != values.shape:
        raise ValueError(
            f"resolution mismatch: map {values.shape} vs labels {labels.shape}")
    if labels.min() < 0:
        raise ValueError("labels must be non-negative")
    flat = labels.ravel()
    vals = values.ravel()
    m = int(flat.max()) + 1
    counts = np.bincount(flat, minlength=m)
    first = np.full(m, flat.size, dtype=np.int64)
    np.minimum.at(first, flat, np.arange(flat.size))
    ref = np.zeros(m, dtype=np.float64)
    nz = counts > 0
    ref[nz] = vals[first[nz]]
    dev_sums = np.bincount(flat, weights=vals - ref[flat], minlength=m)
    means = ref.copy()
    means[nz] += dev_sums[nz] / counts[nz]
    return means[labels]


def generate_pseudo_mask(img: np.ndarray, att: AttentionSet, params: PgmConfig,
                         labels: np.ndarray | None = None,
                         provenance: dict | None = None) -> PseudoMask:
    """Full pseudo-mask pipeline for one sample.

    superpixels -> attention fusion -> per-region averaging -> min-max
    normalization -> fixed-threshold binarization. ``labels`` may carry a
    precomputed superpixel map (they depend only on the image, so callers
    cache them across epochs).
    """
    params.validate()

    def stage(name, fn, *args):
        try:
            return fn(*args)
        except Exception as exc:
            raise RuntimeError(f"pseudo-mask stage '{name}' failed: {exc}") from exc

    if labels is None:
        labels = stage("superpixels", imaging.felzenszwalb_segment, img,
                       params.felz_k, params.felz_sigma, params.felz_min_size)
    fused = stage("fuse_attention", fuse_attention, att)
    averaged = stage("region_average", superpixel_region_average, fused, labels)
    normalized = stage("normalize", imaging.minmax_normalize, averaged)
    mask = stage("binarize", imaging.binarize, normalized, params.threshold)
    return PseudoMask(mask=mask, provenance=dict(provenance or {}))


class SuperpixelCache:
    """Per-sample superpixel maps, computed once (they depend only on the image)."""

    def __init__(self, params: PgmConfig):
        self.params = params.validate()
        self._store: dict[str, np.ndarray] = {}

    def get(self, sample_id: str, img: np.ndarray) -> np.ndarray:
        labels = self._store.get(sample_id)
        if labels is None:
            labels = imaging.felzenszwalb_segment(
                img, self.params.felz_k, self.params.felz_sigma,
                self.params.felz_min_size)
            self._store[sample_id] = labels
        return labels

    def __len__(self):
        return len(self._store)


def superpixel_boundaries(labels: np.ndarray) -> np.ndarray:
    """Pixels that touch a 4-neighbor with a different superpixel label."""
    labels = np.asarray(labels)
    edges = np.zeros(labels.shape, dtype=bool)
    edges[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    edges[:, 1:] |= labels[:, :-1] != labels[:, 1:]
    edges[:-1, :] |= labels[:-1, :] != labels[1:, :]
    edges[1:, :] |= labels[:-1, :] != labels[1:, :]
    return edges.astype(np.uint8)


def render_preview(img: np.ndarray, att: AttentionSet, params: PgmConfig,
                   labels: np.ndarray | None = None):
    """Arrays for the preview triplet: boundary overlay, fused heatmap, pseudo-mask."""
    gray = np.asarray(img, dtype=np.float64)
    if gray.ndim == 3:
        gray = gray.mean(axis=2)
    if labels is None:
        labels = imaging.felzenszwalb_segment(
            img, params.felz_k, params.felz_sigma, params.felz_min_size)
    fused = fuse_attention(att)
    pseudo = generate_pseudo_mask(img, att, params, labels=labels)
    overlay = np.stack([gray, gray, gray], axis=2)
    edges = superpixel_boundaries(labels).astype(bool)
    overlay[edges] = (1.0, 0.1, 0.1)
    return overlay, fused, pseudo.mask
