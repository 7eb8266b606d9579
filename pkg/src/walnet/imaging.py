"""Raster primitives: superpixels, bilinear resizing, normalization, binary masks.

Conventions used across the package:
  * images are float arrays in [0, 1], shaped (H, W) or (H, W, C) with C in {1, 3}
  * scalar maps are 2-D float arrays
  * binary masks are 2-D uint8 arrays with values in {0, 1}
  * superpixel maps are 2-D int32 label arrays, labels exactly {0..m-1}
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

# Felzenszwalb edge weights are computed on a 0-255 intensity scale so the
# usual published defaults (k=100, sigma=0.8, min_size=20) behave as intended
# even though our images live in [0, 1].
_EDGE_WEIGHT_SCALE = 255.0


@dataclass(frozen=True)
class BBox:
    """Half-open pixel rectangle [row0, row1) x [col0, col1)."""

    row0: int
    col0: int
    row1: int
    col1: int

    def __post_init__(self):
        if not (self.row0 < self.row1 and self.col0 < self.col1):
            raise ValueError(f"degenerate bbox {self}")
        if self.row0 < 0 or self.col0 < 0:
            raise ValueError(f"negative bbox origin {self}")

    @property
    def height(self) -> int:
        return self.row1 - self.row0

    @property
    def width(self) -> int:
        return self.col1 - self.col0

    @classmethod
    def full(cls, h: int, w: int) -> "BBox":
        return cls(0, 0, h, w)

    def check_within(self, h: int, w: int) -> None:
        if self.row1 > h or self.col1 > w:
            raise ValueError(f"bbox {self} exceeds image bounds {h}x{w}")


def validate_image(img: np.ndarray, min_side: int = 1) -> np.ndarray:
    """Check an image array (values in [0,1], finite, (H,W) or (H,W,C))."""
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] not in (1, 3):
        raise ValueError(f"expected 1 or 3 channels, got {img.shape[2]}")
    if img.ndim not in (2, 3):
        raise ValueError(f"expected 2-D or 3-D image, got shape {img.shape}")
    if img.shape[0] < min_side or img.shape[1] < min_side:
        raise ValueError(f"image {img.shape[:2]} smaller than {min_side}x{min_side}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values outside [0, 1]")
    return img


def validate_scalar_map(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"scalar map must be 2-D, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("scalar map contains non-finite values")
    return values


def validate_binary_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask values must be 0/1")
    return mask.astype(np.uint8)


def region_count(labels: np.ndarray) -> int:
    return int(labels.max()) + 1


class _UnionFind:
    """Union-find over pixel components tracking size and max internal weight."""

    __slots__ = ("parent", "size", "internal")

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n
        self.internal = [0.0] * n

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a: int, b: int, w: float) -> None:
        if self.size[a] < self.size[b]:
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        self.internal[a] = w


def _grid_edges(smoothed: np.ndarray):
    """8-connected grid edges as (src, dst, weight, direction) flat arrays.

    Each undirected edge is emitted once from its row-major source pixel;
    directions are 0=right, 1=down, 2=down-right, 3=down-left.
    """
    h, w = smoothed.shape[:2]
    idx = np.arange(h * w, dtype=np.int64).reshape(h, w)

    def dist(a, b):
        d = a - b
        if d.ndim == 3:
            return np.sqrt(np.sum(d * d, axis=2)).ravel()
        return np.abs(d).ravel()

    srcs, dsts, ws, dirs = [], [], [], []
    for code, (sl_src, sl_dst) in enumerate([
        ((slice(None), slice(None, -1)), (slice(None), slice(1, None))),        # right
        ((slice(None, -1), slice(None)), (slice(1, None), slice(None))),        # down
        ((slice(None, -1), slice(None, -1)), (slice(1, None), slice(1, None))), # down-right
        ((slice(None, -1), slice(1, None)), (slice(1, None), slice(None, -1))), # down-left
    ]):
        srcs.append(idx[sl_src].ravel())
        dsts.append(idx[sl_dst].ravel())
        ws.append(dist(smoothed[sl_src], smoothed[sl_dst]))
        dirs.append(np.full(srcs[-1].size, code, dtype=np.int8))
    return (np.concatenate(srcs), np.concatenate(dsts),
            np.concatenate(ws), np.concatenate(dirs))


def felzenszwalb_segment(img: np.ndarray, k: float = 100.0, sigma: float = 0.8,
                         min_size: int = 20) -> np.ndarray:
    """Graph-based superpixel segmentation (Felzenszwalb-Huttenlocher).

    The image is Gaussian-smoothed by ``sigma``, an 8-connected grid graph is
    built with intensity-difference edge weights (absolute difference for
    grayscale, Euclidean over channels otherwise, on a 0-255 scale), and edges
    are processed in ascending weight order with a union-find, merging
    components Ci, Cj whenever w <= min(Int(Ci) + k/|Ci|, Int(Cj) + k/|Cj|)
    where Int is the component's largest internal edge weight. A final pass
    merges components smaller than ``min_size`` into a neighbor. Equal-weight
    edges are ordered by (row-major source index, direction), so the output is
    fully deterministic.

    Returns an int32 label array with labels exactly {0..m-1}, numbered by
    first row-major occurrence.
    """
    if k <= 0:
        raise ValueError(f"k must be > 0, got {k}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if min_size < 1:
        raise ValueError(f"min_size must be >= 1, got {min_size}")
    img = validate_image(img, min_side=2)

    work = img.astype(np.float64) * _EDGE_WEIGHT_SCALE
    if work.ndim == 3 and work.shape[2] == 1:
        work = work[:, :, 0]
    if sigma > 0:
        if work.ndim == 3:
            work = np.stack([gaussian_filter(work[:, :, c], sigma, mode="reflect")
                             for c in range(work.shape[2])], axis=2)
        else:
            work = gaussian_filter(work, sigma, mode="reflect")

    h, w = work.shape[:2]
    srcs, dsts, ws, dirs = _grid_edges(work)
    order = np.lexsort((dirs, srcs, ws))
    src_l = srcs[order].tolist()
    dst_l = dsts[order].tolist()
    w_l = ws[order].tolist()

    uf = _UnionFind(h * w)
    for s, d, wt in zip(src_l, dst_l, w_l):
        ra, rb = uf.find(s), uf.find(d)
        if ra == rb:
            continue
        if wt <= min(uf.internal[ra] + k / uf.size[ra],
                     uf.internal[rb] + k / uf.size[rb]):
            uf.union(ra, rb, wt)

    if min_size > 1:
        for s, d, wt in zip(src_l, dst_l, w_l):
            ra, rb = uf.find(s), uf.find(d)
            if ra != rb and (uf.size[ra] < min_size or uf.size[rb] < min_size):
                uf.union(ra, rb, wt)

    labels = np.empty(h * w, dtype=np.int32)
    remap: dict[int, int] = {}
    for i in range(h * w):
        root = uf.find(i)
        lab = remap.get(root)
        if lab is None:
            lab = len(remap)
            remap[root] = lab
        labels[i] = lab
    return labels.reshape(h, w)


def resize_bilinear(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a 2-D map using half-pixel sample centers.

    Output pixel (i, j) samples the input at ((i+0.5)*H/out_h - 0.5,
    (j+0.5)*W/out_w - 0.5) with edge clamping; matches the usual
    align_corners=False convention, so constants are preserved exactly and
    output extrema never exceed the input's.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    values = validate_scalar_map(values)
    in_h, in_w = values.shape

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.maximum(src, 0.0)
        i0 = np.minimum(src.astype(np.int64), n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    r0, r1, tr = axis_coords(in_h, out_h)
    c0, c1, tc = axis_coords(in_w, out_w)
    tr = tr[:, None]
    tc = tc[None, :]
    return ((1 - tr) * (1 - tc) * values[np.ix_(r0, c0)]
            + (1 - tr) * tc * values[np.ix_(r0, c1)]
            + tr * (1 - tc) * values[np.ix_(r1, c0)]
            + tr * tc * values[np.ix_(r1, c1)])


def resize_image(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Channel-wise bilinear resize for (H,W) or (H,W,C) images."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return resize_bilinear(img, out_h, out_w)
    return np.stack([resize_bilinear(img[:, :, c], out_h, out_w)
                     for c in range(img.shape[2])], axis=2)


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Rescale a map to [0, 1]; a constant map maps to all zeros."""
    values = validate_scalar_map(values)
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def binarize(values: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a map: 1 where value >= threshold, else 0."""
    if not np.isfinite(threshold):
        raise ValueError(f"threshold must be finite, got {threshold}")
    values = validate_scalar_map(values)
    return (values >= threshold).astype(np.uint8)


def save_mask_png(mask: np.ndarray, path) -> None:
    """Write a {0,1} mask as an 8-bit grayscale PNG with values 0/255."""
    mask = validate_binary_mask(mask)
    Image.fromarray(mask * np.uint8(255), mode="L").save(path)


def load_mask_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr >= 128).astype(np.uint8)


def save_labels_png(labels: np.ndarray, path) -> None:
    """Write a superpixel label map as a single-channel 16-bit PNG."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 0xFFFF:
        raise ValueError("labels out of uint16 range")
    Image.fromarray(labels.astype(np.uint16)).save(path)


def load_labels_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.int32)
