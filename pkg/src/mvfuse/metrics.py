"""Confusion matrices and intersection-over-union summaries.

Matrices index ground truth by row and prediction by column. Points whose
ground truth is the IGNORE id ``num_classes`` are skipped and tallied
separately; predictions never carry IGNORE.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class ConfusionMatrix:
    num_classes: int
    counts: np.ndarray = field(repr=False)
    ignored: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot add matrices with different class counts")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts,
                               self.ignored + other.ignored)


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> ConfusionMatrix:
    """Count (gt, pred) pairs; IGNORE ground truth rows are dropped."""
    p = np.asarray(pred, dtype=np.int64)
    g = np.asarray(gt, dtype=np.int64)
    if p.shape != g.shape or p.ndim != 1:
        raise ValueError(f"pred {p.shape} and gt {g.shape} must be equal 1-d shapes")
    if num_classes < 1:
        raise ValueError("num_classes must be positive")
    if p.size and (p.min() < 0 or p.max() >= num_classes):
        raise ValueError("prediction outside class range")
    if g.size and (g.min() < 0 or g.max() > num_classes):
        raise ValueError("ground truth outside class range (IGNORE is num_classes)")
    keep = g != num_classes
    flat = g[keep] * num_classes + p[keep]
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return ConfusionMatrix(
        num_classes=num_classes,
        counts=counts.reshape(num_classes, num_classes).astype(np.int64),
        ignored=int((~keep).sum()),
    )


def accumulate(matrices: Iterable[ConfusionMatrix]) -> ConfusionMatrix:
    """Sum matrices over scans; they must agree on the class count."""
    it = iter(matrices)
    try:
        total = next(it)
    except StopIteration:
        raise ValueError("nothing to accumulate") from None
    for cm in it:
        total = total + cm
    return total


def class_iou(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class intersection over union, NaN where a class never occurs.

    A class is absent when its true positives, false positives, and false
    negatives are all zero; absent classes must not drag averages down.
    """
    if cm.total == 0:
        raise DataError("no evaluated points")
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    union = tp + fp + fn
    iou = np.full(cm.num_classes, np.nan)
    seen = union > 0
    iou[seen] = tp[seen] / union[seen]
    return iou


def miou(cm: ConfusionMatrix) -> float:
    """Mean IoU over the classes that occur."""
    iou = class_iou(cm)
    if np.isnan(iou).all():
        raise DataError("no evaluated points")
    return float(np.nanmean(iou))


def fw_iou(cm: ConfusionMatrix) -> float:
    """IoU weighted by ground truth frequency.

    Classes with no ground truth points have zero weight, so their IoU
    (possibly NaN) never contributes.
    """
    iou = class_iou(cm)
    freq = cm.counts.sum(axis=1) / cm.total
    weighted = np.where(freq > 0, freq * np.where(np.isnan(iou), 0.0, iou), 0.0)
    return float(weighted.sum())


def stratified_confusions(
    pred: np.ndarray,
    gt: np.ndarray,
    radii: np.ndarray,
    edges: Sequence[float],
    num_classes: int | None = None,
) -> tuple[list[ConfusionMatrix], int]:
    """Split points into planar-radius bands and count each separately.

    Bands are half open ``[e_i, e_i+1)``; points outside the outermost
    edges are dropped and reported in the second return value.
    """
    r = np.asarray(radii, dtype=np.float64)
    e = np.asarray(edges, dtype=np.float64)
    if e.ndim != 1 or e.size < 2 or (np.diff(e) <= 0).any():
        raise ValueError("edges must be at least two strictly increasing values")
    if r.shape != np.asarray(pred).shape:
        raise ValueError("radii must align with predictions")
    k = num_classes if num_classes is not None else _infer_classes(pred, gt)
    out = []
    inside = np.zeros(r.shape[0], dtype=bool)
    for lo, hi in zip(e[:-1], e[1:]):
        sel = (r >= lo) & (r < hi)
        inside |= sel
        out.append(confusion_matrix(np.asarray(pred)[sel], np.asarray(gt)[sel], k))
    return out, int((~inside).sum())


def _infer_classes(pred, gt) -> int:
    p = np.asarray(pred, dtype=np.int64)
    g = np.asarray(gt, dtype=np.int64)
    hi = max(p.max(initial=0), g.max(initial=0))
    return int(hi) + 1


@dataclass(frozen=True)
class StratumResult:
    r_lo: float
    r_hi: float
    cm: ConfusionMatrix
    miou: float


def stratified_miou(pred, gt, cloud, edges, num_classes: int | None = None) -> list[StratumResult]:
    """Per-band mean IoU against planar radius; empty bands give NaN."""
    r = cloud.planar_radius()
    e = np.asarray(edges, dtype=np.float64)
    if e.ndim != 1 or e.size < 2 or (np.diff(e) <= 0).any():
        raise ValueError("edges must be at least two strictly increasing values")
    k = num_classes if num_classes is not None else _infer_classes(pred, gt)
    out = []
    for lo, hi in zip(e[:-1], e[1:]):
        sel = (r >= lo) & (r < hi)
        cm = confusion_matrix(np.asarray(pred)[sel], np.asarray(gt)[sel], k)
        try:
            value = miou(cm)
        except DataError:
            value = float("nan")
        out.append(StratumResult(r_lo=float(lo), r_hi=float(hi), cm=cm, miou=value))
    return out
