"""Generate the synthetic plaque dataset and look at what makes it non-trivial.

Each image has a speckled background, bright vessel-wall bands, and one
elliptical lesion: bright (hyperechoic), dark (hypoechoic), or half/half
(mixed). The background sits at the midpoint of the two lesion intensities
and every nuisance value jitters per sample, so whole-image statistics do not
identify the class; the mean *inside* the lesion does.
"""

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from walnet.data import CLASS_NAMES, SyntheticSpec, generate_synthetic, split

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

spec = SyntheticSpec(counts=(60, 120, 70), seed=5)
records = generate_synthetic(spec)

fig, axes = plt.subplots(2, 3, figsize=(9, 6))
for col, cls in enumerate(CLASS_NAMES):
    rec = next(r for r in records if r.label == col)
    axes[0, col].imshow(rec.image, cmap="gray", vmin=0, vmax=1)
    axes[0, col].set_title(cls)
    axes[1, col].imshow(rec.gt_mask, cmap="gray")
    axes[1, col].set_title("GT mask")
    for ax in (axes[0, col], axes[1, col]):
        ax.axis("off")
fig.tight_layout()
fig.savefig(out_dir / "synthetic_classes.png", dpi=130)

print("class      global-mean        in-lesion-mean")
for c, cls in enumerate(CLASS_NAMES):
    g = [float(r.image.mean()) for r in records if r.label == c]
    m = [float(r.image[r.gt_mask > 0].mean()) for r in records if r.label == c]
    print(f"{cls:<10} [{min(g):.3f}, {max(g):.3f}]    [{min(m):.3f}, {max(m):.3f}]")

train, val, test = split(records, (0.6, 0.2, 0.2), seed=0)
print(f"\n6:2:2 split -> {len(train)}/{len(val)}/{len(test)}")
hist = np.bincount([r.label for r in train], minlength=3)
print(f"train class histogram: {dict(zip(CLASS_NAMES, hist.tolist()))}")
print(f"figure saved to {out_dir / 'synthetic_classes.png'}")
