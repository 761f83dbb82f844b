"""Objective
===================
Training loss ``L = L_CE + L_SIOU``: softmax cross-entropy over the five
target tokens plus the SIOU box loss evaluated on the soft-argmax box of
the four coordinate positions. Also the plain IoU used by the metrics.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from coordtrack import tensor as T
from coordtrack.errors import ContractViolation
from coordtrack.tensor import Tensor
from coordtrack.vocab import BBox
from coordtrack.vocab import CoordVocab

SHAPE_EXPONENT = 4.0


@dataclass(frozen=True)
class LossReport:
    ce: float
    siou: float
    total: float
    token_log_probs: np.ndarray
    tensor: Tensor


def ce_loss(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean over positions of ``-log softmax(logits)[target]``."""
    rows, width = logits.shape
    ids = np.asarray(targets, dtype=np.int64)
    if ids.shape != (rows,):
        raise ContractViolation(f"{len(ids)} targets for {rows} logit rows")
    if ids.min() < 1 or ids.max() > width:
        raise ContractViolation(f"target ids {ids.tolist()} outside [1, {width}]")
    picked = T.log_softmax(logits, axis=-1)[np.arange(rows), ids - 1]
    return -T.mean(picked)


def iou(a: BBox, b: BBox) -> float:
    if a.frame is not b.frame:
        raise ContractViolation(f"iou() of boxes in frames {a.frame.value} and {b.frame.value}")
    iw = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    ih = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def siou_term(pred: Tensor, gt: BBox) -> Tensor:
    """Differentiable SIOU loss of a ``[x, y, w, h]`` tensor against a fixed box.

    loss = 1 - IoU + (distance cost + shape cost) / 2, the distance cost
    weighted by the angle cost of the centre offset.
    """
    if pred.shape != (4,):
        raise ContractViolation(f"siou_term() needs a 4-vector box, got shape {pred.shape}")
    gx, gy, gw, gh = gt.as_tuple()
    px, py, pw, ph = pred[0], pred[1], pred[2], pred[3]
    if pw.item() <= 0 or ph.item() <= 0:
        raise ContractViolation(f"predicted box has non-positive extents {pred.data.tolist()}")

    iw = T.maximum(T.minimum(px + pw, gx + gw) - T.maximum(px, gx), 0.0)
    ih = T.maximum(T.minimum(py + ph, gy + gh) - T.maximum(py, gy), 0.0)
    inter = iw * ih
    overlap = inter / (pw * ph + gw * gh - inter)

    dx = (gx + gw / 2.0) - (px + pw / 2.0)
    dy = (gy + gh / 2.0) - (py + ph / 2.0)
    sigma_sq = dx * dx + dy * dy
    if sigma_sq.item() == 0.0:
        distance = T.as_tensor(0.0)
    else:
        # 1 - 2 sin^2(arcsin(|dy| / sigma) - pi / 4) == 2 |dx| |dy| / sigma^2
        angle = 2.0 * T.absolute(dx) * T.absolute(dy) / sigma_sq
        gamma = 2.0 - angle
        cw = T.maximum(px + pw, gx + gw) - T.minimum(px, gx)
        ch = T.maximum(py + ph, gy + gh) - T.minimum(py, gy)
        rho_x = (dx / cw) ** 2
        rho_y = (dy / ch) ** 2
        distance = (1.0 - T.exp(-gamma * rho_x)) + (1.0 - T.exp(-gamma * rho_y))

    omega_w = T.absolute(pw - gw) / T.maximum(pw, gw)
    omega_h = T.absolute(ph - gh) / T.maximum(ph, gh)
    shape = (1.0 - T.exp(-omega_w)) ** SHAPE_EXPONENT + (1.0 - T.exp(-omega_h)) ** SHAPE_EXPONENT

    return 1.0 - overlap + (distance + shape) / 2.0


def siou_loss(pred: BBox, gt: BBox) -> float:
    if pred.frame is not gt.frame:
        raise ContractViolation(f"siou_loss() of boxes in frames {pred.frame.value} and {gt.frame.value}")
    return siou_term(T.as_tensor(pred.as_array()), gt).item()


def soft_box(logits: Tensor, vocab: CoordVocab) -> Tensor:
    """Expected bin centre per coordinate under the softmax over bin rows."""
    if logits.ndim != 2 or logits.shape[0] != 4 or logits.shape[1] < vocab.nbins:
        raise ContractViolation(f"soft_box() needs 4 x (nbins + 1) logits, got {logits.shape}")
    probs = T.softmax(logits[:, : vocab.nbins], axis=-1)
    return T.matmul(probs, vocab.bin_centers()[:, None])[:, 0]


def total_loss(
    logits: Tensor,
    targets: Sequence[int],
    gt_box: BBox,
    vocab: CoordVocab,
    use_siou: bool = True,
) -> LossReport:
    """CE over ``[x, y, w, h, end]`` plus SIOU on the soft box of the first four rows."""
    if logits.shape != (5, vocab.output_size):
        raise ContractViolation(f"total_loss() needs 5 x {vocab.output_size} logits, got {logits.shape}")
    ce = ce_loss(logits, targets)
    ids = np.asarray(targets, dtype=np.int64) - 1
    log_probs = T.log_softmax(logits.data, axis=-1).data[np.arange(5), ids]
    if use_siou:
        siou = siou_term(soft_box(logits[:4], vocab), gt_box)
        total = ce + siou
        siou_value = siou.item()
    else:
        total = ce
        siou_value = 0.0
    return LossReport(
        ce=ce.item(),
        siou=siou_value,
        total=total.item(),
        token_log_probs=log_probs,
        tensor=total,
    )
