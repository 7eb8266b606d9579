"""Classification metrics: confusion matrix, accuracy/F1/kappa/precision/recall,
one-vs-rest and micro-averaged ROC AUC, Dice overlap.

Conventions: confusion rows are true classes, columns predicted. Per-class
precision/recall with an empty denominator are reported as 0 with a warning.
ROC thresholds sweep every unique score; AUC is the trapezoid rule.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricsReport:
    confusion: np.ndarray
    accuracy: float
    f1: float
    kappa: float
    precision: float
    recall: float
    per_class_auc: list[float] | None = None
    micro_auc: float | None = None
    dice: float | None = None
    extras: dict = field(default_factory=dict)

    METRIC_COLUMNS = ("accuracy", "f1", "kappa", "precision", "recall")

    def to_dict(self) -> dict:
        d = {
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "f1": self.f1,
            "kappa": self.kappa,
            "precision": self.precision,
            "recall": self.recall,
        }
        if self.per_class_auc is not None:
            d["per_class_auc"] = self.per_class_auc
        if self.micro_auc is not None:
            d["micro_auc"] = self.micro_auc
        if self.dice is not None:
            d["dice"] = self.dice
        d.update(self.extras)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def confusion_matrix(y_true, y_pred, n_classes: int = 3) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("y_true and y_pred must be equal-length 1-D arrays")
    if y_true.size and (y_true.min() < 0 or y_true.max() >= n_classes
                        or y_pred.min() < 0 or y_pred.max() >= n_classes):
        raise ValueError(f"labels outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _safe_divide(num, den, what):
    out = np.zeros_like(num, dtype=np.float64)
    bad = den == 0
    if bad.any():
        warnings.warn(f"{what} undefined for classes {np.flatnonzero(bad).tolist()}; "
                      "reporting 0", RuntimeWarning, stacklevel=3)
    out[~bad] = num[~bad] / den[~bad]
    return out


def roc_curve(y_true_bin, scores):
    """ROC points thresholded at every unique score (plus the all-negative point).

    Returns (fpr, tpr, thresholds) with fpr/tpr starting at (0,0) and ending
    at (1,1); positives are `score >= threshold`.
    """
    y = np.asarray(y_true_bin, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D arrays")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative samples")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    tp = np.cumsum(y[order])
    fp = np.cumsum(~y[order])
    # keep the last index of each tied-score run: that is the point where the
    # threshold equals this score and every sample >= it is predicted positive
    distinct = np.flatnonzero(np.diff(s_sorted) != 0)
    idx = np.concatenate([distinct, [s.size - 1]])
    tpr = np.concatenate([[0.0], tp[idx] / n_pos])
    fpr = np.concatenate([[0.0], fp[idx] / n_neg])
    thresholds = np.concatenate([[np.inf], s_sorted[idx]])
    return fpr, tpr, thresholds


def auc_trapezoid(fpr, tpr) -> float:
    return float(np.trapezoid(tpr, fpr))


def one_vs_rest_auc(y_true, scores, n_classes: int = 3):
    """Per-class one-vs-rest AUC plus micro-averaged AUC over flattened pairs."""
    y_true = np.asarray(y_true, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (y_true.size, n_classes):
        raise ValueError(f"scores must be (n, {n_classes}), got {scores.shape}")
    per_class = []
    for c in range(n_classes):
        fpr, tpr, _ = roc_curve(y_true == c, scores[:, c])
        per_class.append(auc_trapezoid(fpr, tpr))
    onehot = np.eye(n_classes, dtype=bool)[y_true]
    fpr, tpr, _ = roc_curve(onehot.ravel(), scores.ravel())
    return per_class, auc_trapezoid(fpr, tpr)


def cohen_kappa(cm: np.ndarray) -> float:
    n = cm.sum()
    p_o = np.trace(cm) / n
    p_e = float((cm.sum(axis=1) * cm.sum(axis=0)).sum()) / (n * n)
    if p_e == 1.0:
        # both marginals concentrated on one class: no chance-corrected signal
        return 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def compute_metrics(cm: np.ndarray, y_true=None, scores=None,
                    dice: float | None = None) -> MetricsReport:
    """Metric bundle from a confusion matrix, with AUCs when scores are given."""
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if cm.sum() == 0:
        raise ValueError("empty confusion matrix")
    if (cm < 0).any():
        raise ValueError("confusion matrix entries must be non-negative")

    diag = np.diag(cm).astype(np.float64)
    precision_c = _safe_divide(diag, cm.sum(axis=0), "precision")
    recall_c = _safe_divide(diag, cm.sum(axis=1), "recall")
    denom = precision_c + recall_c
    f1_c = np.where(denom > 0, 2 * precision_c * recall_c
                    / np.where(denom > 0, denom, 1.0), 0.0)

    per_class_auc = micro_auc = None
    if scores is not None:
        if y_true is None:
            raise ValueError("AUC needs y_true alongside scores")
        per_class_auc, micro_auc = one_vs_rest_auc(y_true, scores, cm.shape[0])

    return MetricsReport(
        confusion=cm,
        accuracy=float(np.trace(cm) / cm.sum()),
        f1=float(f1_c.mean()),
        kappa=cohen_kappa(cm),
        precision=float(precision_c.mean()),
        recall=float(recall_c.mean()),
        per_class_auc=per_class_auc,
        micro_auc=micro_auc,
        dice=dice,
    )


def dice_coefficient(a: np.ndarray, b: np.ndarray) -> float:
    """2|A∩B| / (|A|+|B|) for binary masks; 1.0 when both are empty."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total
