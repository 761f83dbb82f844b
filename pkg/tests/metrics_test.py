"""One-pass evaluation metrics against brute-force references.
"""
import numpy as np
import pytest

from coordtrack.errors import ContractViolation
from coordtrack.metrics import SUCCESS_THRESHOLDS
from coordtrack.metrics import center_error
from coordtrack.metrics import evaluate
from coordtrack.metrics import frame_iou
from coordtrack.metrics import normalized_center_error
from coordtrack.metrics import normp_metric
from coordtrack.metrics import pre_metric
from coordtrack.metrics import suc_metric
from coordtrack.metrics import success_curve
from coordtrack.vocab import BBox
from tests import oracles


def to_boxes(rows):
    return [BBox(*r) for r in rows]


def random_rows(rng, count):
    xy = rng.uniform(0.0, 200.0, size=(count, 2))
    wh = rng.uniform(5.0, 60.0, size=(count, 2))
    return np.hstack([xy, wh]).tolist()


def test_perfect_tracking_scores_twenty_of_twenty_one():
    """IoU 1 clears every threshold except 1.0 itself."""
    gt = to_boxes([[10.0, 10.0, 20.0, 30.0], [50.0, 40.0, 8.0, 8.0]])
    report = evaluate(gt, gt)
    assert report.suc == pytest.approx(20.0 / 21.0)
    assert report.pre == 1.0
    assert report.normp == 1.0
    np.testing.assert_array_equal(report.center_error, [0.0, 0.0])


def test_disjoint_boxes_score_zero_success():
    """No overlap means success fails at every threshold."""
    pred = to_boxes([[0.0, 0.0, 10.0, 10.0]])
    gt = to_boxes([[100.0, 100.0, 10.0, 10.0]])
    report = evaluate(pred, gt)
    assert report.suc == 0.0
    assert report.pre == 0.0
    assert report.normp == 0.0


def test_metrics_match_the_reference_on_random_tracks():
    """Suc, Pre and NormP agree with loop implementations to 1e-12."""
    rng = np.random.default_rng(0)
    gt_rows = random_rows(rng, 300)
    pred_rows = (np.asarray(gt_rows) + rng.normal(0.0, 8.0, size=(300, 4)) * [1, 1, 0.2, 0.2]).tolist()
    pred_rows = [[x, y, max(w, 1.0), max(h, 1.0)] for x, y, w, h in pred_rows]
    pred, gt = to_boxes(pred_rows), to_boxes(gt_rows)
    assert suc_metric(pred, gt) == pytest.approx(oracles.success_auc(pred_rows, gt_rows), rel=1e-12, abs=1e-12)
    assert pre_metric(pred, gt) == pytest.approx(oracles.precision(pred_rows, gt_rows), rel=1e-12, abs=1e-12)
    assert normp_metric(pred, gt) == pytest.approx(
        oracles.normalized_precision(pred_rows, gt_rows), rel=1e-12, abs=1e-12
    )
    expected_iou = [oracles.box_iou(p, g) for p, g in zip(pred_rows, gt_rows)]
    np.testing.assert_allclose(frame_iou(pred, gt), expected_iou, rtol=1e-12, atol=1e-12)


def test_precision_radius_is_inclusive():
    """A centre error of exactly 20 px still counts as precise."""
    pred = to_boxes([[20.0, 0.0, 10.0, 10.0], [21.0, 0.0, 10.0, 10.0]])
    gt = to_boxes([[0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 10.0]])
    np.testing.assert_array_equal(center_error(pred, gt), [20.0, 21.0])
    assert pre_metric(pred, gt) == 0.5


def test_normalized_error_divides_by_ground_truth_extent():
    """Offsets are scaled per axis by the ground-truth width and height."""
    pred = to_boxes([[4.0, 3.0, 20.0, 10.0]])
    gt = to_boxes([[0.0, 0.0, 20.0, 10.0]])
    np.testing.assert_allclose(normalized_center_error(pred, gt), [np.hypot(0.2, 0.3)])
    assert normp_metric(pred, gt) == 0.0


def test_success_curve_uses_strict_inequality():
    """Each threshold counts frames whose IoU is strictly above it."""
    curve = success_curve(np.array([0.0, 0.5, 1.0]))
    assert len(curve) == len(SUCCESS_THRESHOLDS) == 21
    assert curve[0] == pytest.approx(2.0 / 3.0)
    assert curve[10] == pytest.approx(1.0 / 3.0)
    assert curve[20] == 0.0


@pytest.mark.parametrize(
    "pred,gt",
    [
        pytest.param([[0.0, 0.0, 1.0, 1.0]], [], id="length mismatch"),
        pytest.param([], [], id="empty"),
    ],
)
def test_evaluate_rejects_unpaired_input(pred, gt):
    """Predictions and ground truth pair up frame by frame."""
    with pytest.raises(ContractViolation):
        evaluate(to_boxes(pred), to_boxes(gt))
