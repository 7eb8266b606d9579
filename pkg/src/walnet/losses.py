"""Segmentation, classification, and total training losses.

Both losses are standard negative cross-entropies with mean reduction over
samples (and pixels), computed in float64 so tests can pin values tightly;
autograd flows through the dtype cast unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

PROB_EPS = 1e-7


@dataclass
class LossBundle:
    """Per-batch loss components; total is exactly seg + cls."""

    seg: torch.Tensor
    cls: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {"loss_seg": float(self.seg.detach()),
                "loss_cls": float(self.cls.detach()),
                "loss_total": float(self.total.detach())}


def segmentation_loss(seg_prob: torch.Tensor, pseudo_mask: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy between predicted probabilities and pseudo-masks.

    ``seg_prob`` holds probabilities in (0,1) (clamped to [eps, 1-eps]);
    ``pseudo_mask`` is binary and carries no gradient.
    """
    if seg_prob.shape != pseudo_mask.shape:
        raise ValueError(
            f"shape mismatch: prediction {tuple(seg_prob.shape)} vs "
            f"mask {tuple(pseudo_mask.shape)}")
    s = seg_prob.double().clamp(PROB_EPS, 1.0 - PROB_EPS)
    d = pseudo_mask.detach().double()
    return -(d * torch.log(s) + (1.0 - d) * torch.log(1.0 - s)).mean()


def classification_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-softmax of the true class over the batch."""
    if logits.ndim != 2:
        raise ValueError(f"logits must be (batch, classes), got {tuple(logits.shape)}")
    labels = torch.as_tensor(labels, dtype=torch.long, device=logits.device)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError(
            f"labels shape {tuple(labels.shape)} incompatible with logits "
            f"{tuple(logits.shape)}")
    if labels.numel() and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"label out of range [0, {logits.shape[1]})")
    z = logits.double()
    log_probs = z - torch.logsumexp(z, dim=1, keepdim=True)
    return -log_probs[torch.arange(z.shape[0]), labels].mean()


def total_loss(seg: torch.Tensor, cls: torch.Tensor,
               batch_id: str | None = None) -> LossBundle:
    """Unweighted sum of the two task losses."""
    total = seg + cls
    if not torch.isfinite(total):
        raise FloatingPointError(
            f"non-finite loss (seg={float(seg.detach())}, "
            f"cls={float(cls.detach())})"
            + (f" in batch {batch_id}" if batch_id is not None else ""))
    return LossBundle(seg=seg, cls=cls, total=total)
