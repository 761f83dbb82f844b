"""Tracker
===================
Per-frame tracking: template and search crops, mapping boxes between the
image and the search crop, the score evaluator and the dynamic-template
update rule.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import List
from typing import Optional
from typing import Protocol
from typing import Sequence
from typing import Tuple

import numpy as np
from scipy import ndimage

from coordtrack.allowed_parameters import BoxFrame
from coordtrack.config import ModelConfig
from coordtrack.decoder import TokenStream
from coordtrack.errors import ContractViolation
from coordtrack.errors import DecodeError
from coordtrack.vocab import BBox
from coordtrack.vocab import CoordVocab

logger = logging.getLogger(__name__)


class Predictor(Protocol):
    @property
    def vocab(self) -> CoordVocab:
        ...

    def predict(self, fixed_tmpl: np.ndarray, dyn_tmpl: np.ndarray, search: np.ndarray) -> TokenStream:
        ...


@dataclass(frozen=True)
class TrackerConfig:
    template_size: int = 128
    search_size: int = 288
    template_factor: float = 2.0
    search_factor: float = 4.5
    threshold: float = 0.6
    interval: int = 25
    update_templates: bool = True

    @classmethod
    def from_model_config(
        cls,
        cfg: ModelConfig,
        threshold: Optional[float] = None,
        interval: Optional[int] = None,
    ) -> "TrackerConfig":
        return cls(
            template_size=cfg.template_size,
            search_size=cfg.search_size,
            template_factor=cfg.template_factor,
            search_factor=cfg.search_factor,
            threshold=cfg.update_threshold if threshold is None else threshold,
            interval=cfg.update_interval if interval is None else interval,
            update_templates=cfg.update_templates,
        )


@dataclass(frozen=True)
class CropSpec:
    """Square crop of ``side`` image pixels around ``center``, resized to ``out_size``."""

    center: Tuple[float, float]
    side: float
    out_size: int

    def __post_init__(self) -> None:
        if not self.side > 0 or self.out_size < 1:
            raise ContractViolation(f"crop needs positive side and size, got {self.side}, {self.out_size}")

    @property
    def scale(self) -> float:
        return self.out_size / self.side

    @property
    def origin(self) -> Tuple[float, float]:
        return self.center[0] - self.side / 2.0, self.center[1] - self.side / 2.0


@dataclass(frozen=True)
class TrackerState:
    fixed_template: np.ndarray
    dynamic_template: np.ndarray
    last_box: BBox
    frame_index: int = 0
    last_update_frame: int = 0
    threshold: float = 0.6
    interval: int = 25

    def __post_init__(self) -> None:
        if self.last_update_frame > self.frame_index:
            raise ContractViolation(
                f"last update at frame {self.last_update_frame} is after frame {self.frame_index}"
            )


@dataclass(frozen=True)
class TrackResult:
    boxes: List[BBox]
    scores: List[float]
    update_frames: List[int]


def crop_spec(box: BBox, factor: float, out_size: int) -> CropSpec:
    """Square of side ``factor * sqrt(w * h)`` centred on the box."""
    return CropSpec(box.center, factor * math.sqrt(box.area), out_size)


def extract_crop(frame: np.ndarray, spec: CropSpec) -> np.ndarray:
    """Bilinear resample of the crop; outside the frame reads the frame mean."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or frame.size == 0:
        raise ContractViolation(f"frames must be non-empty 2-D intensity arrays, got shape {frame.shape}")
    ox, oy = spec.origin
    step = spec.side / spec.out_size
    # pixel k spans [k, k + 1); map_coordinates addresses its centre as k
    offsets = (np.arange(spec.out_size, dtype=np.float64) + 0.5) * step - 0.5
    rows, cols = np.meshgrid(oy + offsets, ox + offsets, indexing="ij")
    return ndimage.map_coordinates(frame, [rows, cols], order=1, mode="constant", cval=float(frame.mean()))


def crop_template(frame: np.ndarray, box: BBox, out_size: int = 128, factor: float = 2.0) -> np.ndarray:
    return extract_crop(frame, crop_spec(box, factor, out_size))


def crop_search(
    frame: np.ndarray,
    prev_box: BBox,
    out_size: int = 288,
    factor: float = 4.5,
) -> Tuple[np.ndarray, CropSpec]:
    spec = crop_spec(prev_box, factor, out_size)
    return extract_crop(frame, spec), spec


def map_box_to_crop(box: BBox, spec: CropSpec) -> BBox:
    """Image-px box to normalized crop coordinates, clipped to the crop."""
    ox, oy = spec.origin
    x1 = min(max((box.x - ox) / spec.side, 0.0), 1.0)
    y1 = min(max((box.y - oy) / spec.side, 0.0), 1.0)
    x2 = min(max((box.x + box.w - ox) / spec.side, 0.0), 1.0)
    y2 = min(max((box.y + box.h - oy) / spec.side, 0.0), 1.0)
    floor = 1e-6
    return BBox(x1, y1, max(x2 - x1, floor), max(y2 - y1, floor), BoxFrame.normalized)


def map_box_to_image(box: BBox, spec: CropSpec, frame_shape: Optional[Tuple[int, int]] = None) -> BBox:
    """Normalized crop box back to image pixels; clamped to the frame when its shape is given."""
    if box.frame is not BoxFrame.normalized:
        raise ContractViolation(f"map_box_to_image() needs a normalized box, got {box.frame.value}")
    ox, oy = spec.origin
    x1, y1 = ox + box.x * spec.side, oy + box.y * spec.side
    x2, y2 = x1 + box.w * spec.side, y1 + box.h * spec.side
    if frame_shape is not None:
        height, width = frame_shape
        x1, x2 = _clamp_extent(x1, x2, width)
        y1, y2 = _clamp_extent(y1, y2, height)
    return BBox(x1, y1, x2 - x1, y2 - y1, BoxFrame.image_px)


def _clamp_extent(lo: float, hi: float, limit: int) -> Tuple[float, float]:
    lo, hi = min(max(lo, 0.0), float(limit)), min(max(hi, 0.0), float(limit))
    if hi - lo < 1.0:
        lo = min(lo, limit - 1.0)
        hi = lo + 1.0
    return lo, hi


def score_evaluator(scores: Sequence[float]) -> float:
    """Mean of the per-coordinate softmax maxima."""
    if len(scores) == 0:
        raise ContractViolation("score_evaluator() needs at least one score")
    values = np.asarray(scores, dtype=np.float64)
    if np.any(values <= 0.0) or np.any(values > 1.0):
        raise ContractViolation(f"scores must lie in (0, 1], got {values.tolist()}")
    return float(np.mean(values))


def init_state(frame: np.ndarray, box: BBox, cfg: TrackerConfig) -> TrackerState:
    """Both templates come from the first frame."""
    template = crop_template(frame, box, cfg.template_size, cfg.template_factor)
    template.flags.writeable = False
    return TrackerState(
        fixed_template=template,
        dynamic_template=template.copy(),
        last_box=box,
        threshold=cfg.threshold,
        interval=cfg.interval,
    )


def maybe_update_template(
    state: TrackerState,
    frame: np.ndarray,
    pred_box: BBox,
    score: float,
    cfg: TrackerConfig,
) -> TrackerState:
    """Refresh the dynamic template once the interval has passed and the score clears the threshold."""
    if not cfg.update_templates:
        return state
    if state.frame_index - state.last_update_frame < state.interval or not score > state.threshold:
        return state
    logger.debug("frame %d: dynamic template updated (score %.3f)", state.frame_index, score)
    return dataclasses.replace(
        state,
        dynamic_template=crop_template(frame, pred_box, cfg.template_size, cfg.template_factor),
        last_update_frame=state.frame_index,
    )


def track_frame(
    state: TrackerState,
    model: Predictor,
    frame: np.ndarray,
    cfg: TrackerConfig,
) -> Tuple[BBox, float, TrackerState]:
    index = state.frame_index + 1
    search, spec = crop_search(frame, state.last_box, cfg.search_size, cfg.search_factor)
    stream = model.predict(state.fixed_template, state.dynamic_template, search)
    try:
        normalized = model.vocab.decode_tokens(stream.generated)
    except DecodeError as exc:
        logger.warning("frame %d: %s; holding previous box", index, exc)
        box, score = state.last_box, 0.0
    else:
        box = map_box_to_image(normalized, spec, frame.shape[:2])
        score = score_evaluator(stream.scores)
    advanced = dataclasses.replace(state, frame_index=index, last_box=box)
    return box, score, maybe_update_template(advanced, frame, box, score, cfg)


def track_sequence(
    model: Predictor,
    frames: Sequence[np.ndarray],
    init_box: BBox,
    cfg: TrackerConfig,
) -> TrackResult:
    """Frame 0 reports ``init_box`` with score 1; later frames are tracked."""
    if len(frames) == 0:
        raise ContractViolation("track_sequence() needs at least one frame")
    state = init_state(frames[0], init_box, cfg)
    boxes, scores, updates = [init_box], [1.0], []
    for frame in frames[1:]:
        box, score, state = track_frame(state, model, frame, cfg)
        if state.last_update_frame == state.frame_index:
            updates.append(state.frame_index)
        boxes.append(box)
        scores.append(score)
    logger.info("tracked %d frames, %d template updates", len(frames), len(updates))
    return TrackResult(boxes, scores, updates)
