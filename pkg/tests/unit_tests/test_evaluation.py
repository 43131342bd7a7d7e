import csv

import numpy as np
import pytest

from motioncrf.errors import LabelOutOfRange, ShapeMismatch
from motioncrf.evaluation import (
    ConfusionMatrix,
    accumulate_confusion,
    class_counts,
    iou_per_class,
    mean_iou,
    write_metrics_csv,
)
from motioncrf.grid import IGNORE_LABEL, GridShape, LabelField, LabelSpace

LABELS = LabelSpace(("road", "building", "car"))
SHAPE = GridShape(4, 4)


def field(rows) -> LabelField:
    return LabelField(SHAPE, LABELS, np.array(rows))


def confusion(pred: LabelField, gt: LabelField) -> ConfusionMatrix:
    return accumulate_confusion(pred, gt, ConfusionMatrix.empty(LABELS))


def hand_case():
    """Class 0 has 7 true pixels of which 5 are found, plus 3 false alarms."""
    gt = field([[0, 0, 0, 0], [0, 0, 0, 1], [1, 1, 1, 1], [2, 2, 2, 2]])
    pred = field([[0, 0, 0, 0], [0, 1, 2, 0], [0, 0, 1, 1], [2, 2, 2, 2]])
    return pred, gt


def test_hand_counted_case() -> None:
    pred, gt = hand_case()
    cm = confusion(pred, gt)
    assert class_counts(cm)[0].tolist() == [5, 3, 2]
    scores = iou_per_class(cm)
    assert scores[0] == 0.5
    assert scores[1] == pytest.approx(2 / 6)
    assert scores[2] == pytest.approx(4 / 5)
    assert cm.total == 16


def test_perfect_and_disjoint_predictions() -> None:
    gt = field([[0, 1, 2, 0]] * 4)
    assert iou_per_class(confusion(gt, gt)) == [1.0, 1.0, 1.0]
    shifted = field([[1, 2, 0, 1]] * 4)
    assert iou_per_class(confusion(shifted, gt)) == [0.0, 0.0, 0.0]
    assert mean_iou(confusion(shifted, gt)) == 0.0


def test_absent_class_is_undefined_and_excluded() -> None:
    gt = field([[0, 0, 1, 1]] * 4)
    pred = field([[0, 1, 1, 1]] * 4)
    scores = iou_per_class(confusion(pred, gt))
    assert scores[2] is None
    assert mean_iou(confusion(pred, gt)) == pytest.approx((0.5 + 2 / 3) / 2)
    assert mean_iou(ConfusionMatrix.empty(LABELS)) is None


def test_ignore_pixels_are_skipped() -> None:
    gt = field([[0, IGNORE_LABEL, IGNORE_LABEL, 1]] * 4)
    pred = field([[0, 2, IGNORE_LABEL, 1]] * 4)
    cm = confusion(pred, gt)
    assert cm.total == 8
    assert iou_per_class(cm) == [1.0, 1.0, None]


def test_unlabelled_prediction_at_labelled_pixel() -> None:
    gt = field([[0, 0, 0, 0]] * 4)
    pred = field([[0, 0, 0, IGNORE_LABEL]] * 4)
    with pytest.raises(LabelOutOfRange):
        confusion(pred, gt)


def test_mismatched_grids_and_spaces() -> None:
    gt = field([[0] * 4] * 4)
    with pytest.raises(ShapeMismatch):
        confusion(LabelField(GridShape(2, 8), LABELS, np.zeros((2, 8))), gt)
    other = LabelSpace(("road", "sky", "car"))
    with pytest.raises(ShapeMismatch):
        accumulate_confusion(gt, gt, ConfusionMatrix.empty(other))
    with pytest.raises(ShapeMismatch):
        ConfusionMatrix.empty(LABELS).merge(ConfusionMatrix.empty(other))


def test_accumulation_over_images_equals_merge() -> None:
    pred, gt = hand_case()
    once = confusion(pred, gt)
    twice = accumulate_confusion(pred, gt, once)
    np.testing.assert_array_equal(twice.counts, once.merge(once).counts)
    assert iou_per_class(twice) == iou_per_class(once)


def test_metrics_csv(tmp_path) -> None:
    gt = field([[0, 0, 1, 1]] * 4)
    pred = field([[0, 1, 1, 1]] * 4)
    path = tmp_path / "iou.csv"
    write_metrics_csv(path, confusion(pred, gt))
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["name", "TP", "FP", "FN", "IoU"]
    assert rows[1] == ["road", "4", "0", "4", "0.5"]
    assert rows[2][:4] == ["building", "8", "4", "0"]
    assert float(rows[2][4]) == pytest.approx(2 / 3)
    assert rows[3] == ["car", "0", "0", "0", ""]
    assert rows[4][0] == "mean"
    assert float(rows[4][4]) == pytest.approx((0.5 + 2 / 3) / 2)
