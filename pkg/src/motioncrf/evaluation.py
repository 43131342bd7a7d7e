"""Confusion matrices and intersection-over-union scores."""

import csv
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import LabelOutOfRange, ShapeMismatch
from .grid import LabelField, LabelSpace, PathLike

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Pixel counts with rows = ground truth and columns = prediction."""

    labels: LabelSpace
    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.array(self.counts, dtype=np.int64)
        if counts.shape != (self.labels.count, self.labels.count):
            raise ShapeMismatch(f"confusion counts have shape {counts.shape} for {self.labels.count} labels")
        if np.any(counts < 0):
            raise ValueError("confusion counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def empty(cls, labels: LabelSpace) -> "ConfusionMatrix":
        """Return an all-zero matrix."""
        return cls(labels, np.zeros((labels.count, labels.count), dtype=np.int64))

    @property
    def total(self) -> int:
        """Number of evaluated pixels."""
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Return the sum of two partial matrices over the same labels."""
        if other.labels != self.labels:
            raise ShapeMismatch("cannot merge confusion matrices over different labels")
        return ConfusionMatrix(self.labels, self.counts + other.counts)


def accumulate_confusion(pred: LabelField, gt: LabelField, existing: ConfusionMatrix) -> ConfusionMatrix:
    """Add every non-ignore ground-truth pixel to ``existing``.

    Raises:
        ShapeMismatch: When grids or label spaces differ.
        LabelOutOfRange: When a prediction at a labelled pixel is the ignore label.
    """
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction grid {pred.shape} differs from ground truth {gt.shape}")
    if pred.labels != existing.labels or gt.labels != existing.labels:
        raise ShapeMismatch("prediction, ground truth and matrix must share a label space")
    valid = gt.valid
    truth = gt.assignment[valid].astype(np.int64)
    guess = pred.assignment[valid].astype(np.int64)
    n = existing.labels.count
    if guess.size and guess.max() >= n:
        raise LabelOutOfRange("prediction leaves a labelled pixel unlabelled")
    counts = np.bincount(truth * n + guess, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(existing.labels, existing.counts + counts)


def class_counts(cm: ConfusionMatrix) -> np.ndarray:
    """Return per-label ``(TP, FP, FN)`` as an ``(n, 3)`` array."""
    tp = np.diag(cm.counts)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp
    return np.stack([tp, fp, fn], axis=1)


def iou_per_class(cm: ConfusionMatrix) -> List[Optional[float]]:
    """Score each label by ``TP / (TP + FP + FN)``; ``None`` when the denominator is 0."""
    scores: List[Optional[float]] = []
    for tp, fp, fn in class_counts(cm):
        denominator = int(tp + fp + fn)
        scores.append(float(tp) / denominator if denominator else None)
    return scores


def mean_iou(cm: ConfusionMatrix) -> Optional[float]:
    """Average the IoU over labels with a defined IoU."""
    defined = [score for score in iou_per_class(cm) if score is not None]
    if not defined:
        return None
    return float(sum(defined) / len(defined))


def write_metrics_csv(path: PathLike, cm: ConfusionMatrix) -> None:
    """Write ``name,TP,FP,FN,IoU`` rows plus a ``mean`` row; undefined IoU is blank."""
    scores = iou_per_class(cm)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["name", "TP", "FP", "FN", "IoU"])
        for name, (tp, fp, fn), score in zip(cm.labels.names, class_counts(cm), scores):
            writer.writerow([name, int(tp), int(fp), int(fn), "" if score is None else repr(score)])
        average = mean_iou(cm)
        writer.writerow(["mean", "", "", "", "" if average is None else repr(average)])
    undefined = [name for name, score in zip(cm.labels.names, scores) if score is None]
    if undefined:
        logger.warning("IoU undefined for absent classes %s; excluded from the mean", undefined)
