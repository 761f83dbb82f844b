"""Coordtrack-API
===================
HTTP service tracking a target through posted frames and scoring
predicted boxes against ground truth.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import logging
import os
from functools import lru_cache
from typing import Any
from typing import Dict
from typing import List
from typing import Optional

import numpy as np
import uvicorn
from fastapi import Depends
from fastapi import FastAPI
from fastapi import HTTPException
from fastapi import Request
from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field

from coordtrack.config import toy_config
from coordtrack.errors import ContractViolation
from coordtrack.errors import SequenceFormatError
from coordtrack.metrics import evaluate
from coordtrack.model import TrackingModel
from coordtrack.tracker import TrackerConfig
from coordtrack.tracker import track_sequence
from coordtrack.vocab import BBox

logger = logging.getLogger(__name__)

WEIGHTS_ENV = "COORDTRACK_WEIGHTS"
CONFIG_ENV = "COORDTRACK_CONFIG"

app = FastAPI(title="coordtrack")


class Box(BaseModel):
    """Image-pixel box, 0-indexed top-left corner."""

    x: float
    y: float
    w: float
    h: float

    def to_bbox(self) -> BBox:
        return BBox(self.x, self.y, self.w, self.h)

    @classmethod
    def from_bbox(cls, box: BBox) -> "Box":
        return cls(x=box.x, y=box.y, w=box.w, h=box.h)


class TrackRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    frames: List[List[List[float]]]
    init_box: Box
    threshold: Optional[float] = Field(None, alias="lambda", ge=0, le=1)
    zu: Optional[int] = Field(None, ge=1)


class TrackResponse(BaseModel):
    boxes: List[Box]
    scores: List[float]
    update_frames: List[int]


class EvaluateRequest(BaseModel):
    pred: List[Box]
    gt: List[Box]


class EvaluateResponse(BaseModel):
    suc: float
    pre: float
    normp: float
    iou: List[float]
    center_error: List[float]


@lru_cache(maxsize=1)
def get_model() -> TrackingModel:
    """Model named by ``COORDTRACK_WEIGHTS``, else a fresh toy model."""
    weights = os.environ.get(WEIGHTS_ENV)
    if weights:
        return TrackingModel.from_files(weights, os.environ.get(CONFIG_ENV) or None)
    logger.warning("%s is not set, serving an untrained toy model", WEIGHTS_ENV)
    return TrackingModel(toy_config(), seed=0)


def _frames(raw: List[List[List[float]]]) -> List[np.ndarray]:
    try:
        stack = np.asarray(raw, dtype=np.float64)
    except ValueError:
        raise ContractViolation("frames must all have the same height and width") from None
    if stack.ndim != 3 or stack.shape[0] == 0 or 0 in stack.shape[1:]:
        raise ContractViolation(f"expected a non-empty list of 2-D frames, got shape {stack.shape}")
    return list(stack)


@app.get("/")
def help_routes() -> Dict[str, str]:
    """ API endpoints and documentation. """
    return {
        "config": "/config",
        "track": "/track",
        "evaluate": "/evaluate",
        "docs": "/docs",
        "redoc": "/redoc",
    }


@app.get("/config")
def served_config(model: TrackingModel = Depends(get_model)) -> Dict[str, Any]:
    """Configuration of the served model."""
    return model.cfg.model_dump(mode="json")


@app.post("/track", response_model=TrackResponse)
def track(request: Request, body: TrackRequest, model: TrackingModel = Depends(get_model)) -> TrackResponse:
    """Tracks ``init_box`` from the first frame through the remaining
    frames. ``lambda`` and ``zu`` override the template update policy.
    """
    try:
        frames = _frames(body.frames)
        cfg = TrackerConfig.from_model_config(model.cfg, threshold=body.threshold, interval=body.zu)
        result = track_sequence(model, frames, body.init_box.to_bbox(), cfg)
    except (ContractViolation, SequenceFormatError) as e:
        logger.error("Error in %s: %s", request.url.path, e)
        raise HTTPException(status_code=422, detail=str(e))
    except Exception:
        logger.exception("Unhandled error in route %s", request.url.path)
        raise HTTPException(status_code=500, detail="An internal server error occurred while tracking.")
    return TrackResponse(
        boxes=[Box.from_bbox(b) for b in result.boxes],
        scores=result.scores,
        update_frames=result.update_frames,
    )


@app.post("/evaluate", response_model=EvaluateResponse)
def evaluate_boxes(request: Request, body: EvaluateRequest) -> EvaluateResponse:
    """Returns Suc, Pre and NormP plus the per-frame IoU and centre error."""
    try:
        report = evaluate([b.to_bbox() for b in body.pred], [b.to_bbox() for b in body.gt])
    except ContractViolation as e:
        logger.error("Error in %s: %s", request.url.path, e)
        raise HTTPException(status_code=422, detail=str(e))
    except Exception:
        logger.exception("Unhandled error in route %s", request.url.path)
        raise HTTPException(status_code=500, detail="An internal server error occurred while scoring.")
    return EvaluateResponse(
        suc=report.suc,
        pre=report.pre,
        normp=report.normp,
        iou=report.iou.tolist(),
        center_error=report.center_error.tolist(),
    )


if __name__ == "__main__":
    uvicorn.run(app, port=8000, host="0.0.0.0")
