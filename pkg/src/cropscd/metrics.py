"""Confusion-matrix construction and the evaluation metric suite.

All metrics read off one n x n count matrix whose entry (i, j) is the number
of cells with truth i predicted j. Per-class scores use one-vs-rest counts;
0/0 ratios resolve to 0 so every metric is a total function over legal
matrices. Chance agreement for the kappa coefficient uses the multiclass
marginal product sum, which reduces to the familiar two-class expression on
2x2 matrices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .grid import BinaryMask, Raster, require_aligned


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (n, n) int64, truth rows, prediction columns
    names: tuple[str, ...] = ()

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise MetricError(f"confusion matrix must be square, got {counts.shape}")
        if counts.shape[0] < 2:
            raise MetricError("need at least 2 categories")
        if (counts < 0).any():
            raise MetricError("negative counts")
        object.__setattr__(self, "counts", counts)
        if self.names and len(self.names) != counts.shape[0]:
            raise MetricError("names length must match matrix size")

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def class_counts(self, k: int) -> tuple[int, int, int, int]:
        """(TP, FP, FN, TN) for class k, one-vs-rest."""
        tp = int(self.counts[k, k])
        fp = int(self.counts[:, k].sum()) - tp
        fn = int(self.counts[k, :].sum()) - tp
        tn = self.total - tp - fp - fn
        return tp, fp, fn, tn


def build_cm(
    truth: Raster,
    pred: Raster,
    n: int,
    scene: Optional[BinaryMask] = None,
    names: tuple[str, ...] = (),
) -> ConfusionMatrix:
    """Exact per-cell counts; cells outside the scene mask are excluded."""
    require_aligned(truth, pred)
    t = truth.cells.ravel().astype(np.int64)
    p = pred.cells.ravel().astype(np.int64)
    if scene is not None:
        require_aligned(truth, scene)
        keep = scene.cells.ravel() != 0
        t, p = t[keep], p[keep]
    if t.size and (t.min() < 0 or t.max() >= n or p.min() < 0 or p.max() >= n):
        raise MetricError(f"labels out of range [0, {n})")
    counts = np.bincount(n * t + p, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(counts, names)


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def per_class_prf(cm: ConfusionMatrix, k: int) -> tuple[float, float, float]:
    """(precision, recall, F1) for class k; 0/0 resolves to 0."""
    if not 0 <= k < cm.n:
        raise MetricError(f"class {k} out of range")
    tp, fp, fn, _ = cm.class_counts(k)
    pre = _ratio(tp, tp + fp)
    rec = _ratio(tp, tp + fn)
    f1 = _ratio(2.0 * pre * rec, pre + rec)
    return pre, rec, f1


def f1_from_pre_rec(pre: float, rec: float) -> float:
    return _ratio(2.0 * pre * rec, pre + rec)


def overall_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise MetricError("empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def kappa(cm: ConfusionMatrix) -> float:
    """Chance-corrected agreement (OA - R) / (1 - R).

    R is the multiclass expected chance agreement from the row/column
    marginals. Degenerate single-category data (R == 1) is defined as 0.
    """
    if cm.total == 0:
        raise MetricError("empty confusion matrix")
    total = float(cm.total)
    rows = cm.counts.sum(axis=1).astype(np.float64)
    cols = cm.counts.sum(axis=0).astype(np.float64)
    chance = float((rows * cols).sum()) / (total * total)
    oa = overall_accuracy(cm)
    if chance == 1.0:
        return 0.0
    return (oa - chance) / (1.0 - chance)


def miou(cm: ConfusionMatrix) -> float:
    """Mean over classes of TP/(TP+FP+FN); absent classes (0/0) are excluded."""
    if cm.total == 0:
        raise MetricError("empty confusion matrix")
    ious = []
    for k in range(cm.n):
        tp, fp, fn, _ = cm.class_counts(k)
        if tp + fp + fn > 0:
            ious.append(tp / (tp + fp + fn))
    return float(np.mean(ious)) if ious else 0.0


def per_class_iou(cm: ConfusionMatrix, k: int) -> float:
    tp, fp, fn, _ = cm.class_counts(k)
    return _ratio(tp, tp + fp + fn)


def overall_report(cm: ConfusionMatrix) -> dict:
    """Macro precision/recall/F1 over all categories plus KC, OA, mIoU."""
    pres, recs, f1s = [], [], []
    detailed = {}
    for k in range(cm.n):
        pre, rec, f1 = per_class_prf(cm, k)
        pres.append(pre)
        recs.append(rec)
        f1s.append(f1)
        name = cm.names[k] if cm.names else str(k)
        detailed[name] = {"precision": pre, "recall": rec, "f1": f1, "iou": per_class_iou(cm, k)}
    return {
        "per_class": detailed,
        "overall": {
            "precision": float(np.mean(pres)),
            "recall": float(np.mean(recs)),
            "f1": float(np.mean(f1s)),
            "kappa": kappa(cm),
            "oa": overall_accuracy(cm),
            "miou": miou(cm),
        },
    }


def write_report(report: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    return path
