"""Metrics
===================
OTB-style one-pass evaluation: success AUC (Suc), precision at 20 px
(Pre) and normalized precision at 0.2 (NormP).
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
from dataclasses import dataclass
from typing import Sequence
from typing import Tuple

import numpy as np

from coordtrack.errors import ContractViolation
from coordtrack.vocab import BBox

SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 21)
PRECISION_RADIUS = 20.0
NORMALIZED_RADIUS = 0.2


@dataclass(frozen=True)
class MetricReport:
    suc: float
    pre: float
    normp: float
    iou: np.ndarray
    center_error: np.ndarray
    normalized_error: np.ndarray

    def __len__(self) -> int:
        return len(self.iou)


def _as_array(boxes: Sequence[BBox]) -> np.ndarray:
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64).reshape(-1, 4)


def _pair(pred: Sequence[BBox], gt: Sequence[BBox]) -> Tuple[np.ndarray, np.ndarray]:
    if len(pred) != len(gt):
        raise ContractViolation(f"{len(pred)} predicted boxes for {len(gt)} ground-truth boxes")
    if len(gt) == 0:
        raise ContractViolation("cannot evaluate an empty sequence")
    return _as_array(pred), _as_array(gt)


def frame_iou(pred: Sequence[BBox], gt: Sequence[BBox]) -> np.ndarray:
    a, b = _pair(pred, gt)
    left = np.maximum(a[:, 0], b[:, 0])
    right = np.minimum(a[:, 0] + a[:, 2], b[:, 0] + b[:, 2])
    top = np.maximum(a[:, 1], b[:, 1])
    bottom = np.minimum(a[:, 1] + a[:, 3], b[:, 1] + b[:, 3])
    inter = np.maximum(0.0, right - left) * np.maximum(0.0, bottom - top)
    union = a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter
    return np.clip(inter / union, 0.0, 1.0)


def _center_offsets(pred: Sequence[BBox], gt: Sequence[BBox]) -> Tuple[np.ndarray, np.ndarray]:
    a, b = _pair(pred, gt)
    delta = (a[:, :2] + a[:, 2:] / 2.0) - (b[:, :2] + b[:, 2:] / 2.0)
    return delta, b[:, 2:]


def center_error(pred: Sequence[BBox], gt: Sequence[BBox]) -> np.ndarray:
    delta, _ = _center_offsets(pred, gt)
    return np.hypot(delta[:, 0], delta[:, 1])


def normalized_center_error(pred: Sequence[BBox], gt: Sequence[BBox]) -> np.ndarray:
    """Centre offset divided by the ground-truth extent per axis."""
    delta, extents = _center_offsets(pred, gt)
    scaled = delta / extents
    return np.hypot(scaled[:, 0], scaled[:, 1])


def success_curve(ious: np.ndarray) -> np.ndarray:
    """Fraction of frames with IoU strictly above each threshold."""
    return np.mean(ious[:, None] > SUCCESS_THRESHOLDS[None, :], axis=0)


def suc_metric(pred: Sequence[BBox], gt: Sequence[BBox]) -> float:
    return float(np.mean(success_curve(frame_iou(pred, gt))))


def pre_metric(pred: Sequence[BBox], gt: Sequence[BBox]) -> float:
    return float(np.mean(center_error(pred, gt) <= PRECISION_RADIUS))


def normp_metric(pred: Sequence[BBox], gt: Sequence[BBox]) -> float:
    return float(np.mean(normalized_center_error(pred, gt) <= NORMALIZED_RADIUS))


def evaluate(pred: Sequence[BBox], gt: Sequence[BBox]) -> MetricReport:
    ious = frame_iou(pred, gt)
    errors = center_error(pred, gt)
    normalized = normalized_center_error(pred, gt)
    return MetricReport(
        suc=float(np.mean(success_curve(ious))),
        pre=float(np.mean(errors <= PRECISION_RADIUS)),
        normp=float(np.mean(normalized <= NORMALIZED_RADIUS)),
        iou=ious,
        center_error=errors,
        normalized_error=normalized,
    )
