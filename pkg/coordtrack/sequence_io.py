"""Sequence I/O
===================
Sequence directories (``0001.pgm`` ... plus ``groundtruth_rect.txt``),
prediction files and metric reports.

Box files hold one ``x,y,w,h`` line per frame, comma or whitespace
separated, with 1-indexed pixel coordinates; boxes are 0-indexed in memory.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict
from typing import List
from typing import Sequence
from typing import Tuple
from typing import Union

import numpy as np
from PIL import Image

from coordtrack.errors import ContractViolation
from coordtrack.errors import SequenceFormatError
from coordtrack.metrics import MetricReport
from coordtrack.vocab import BBox

logger = logging.getLogger(__name__)

GROUNDTRUTH_FILE = "groundtruth_rect.txt"
_SEPARATORS = re.compile(r"[,\s]+")

PathLike = Union[str, Path]


@dataclass
class LoadedSequence:
    frames: List[np.ndarray]
    boxes: List[BBox]

    def __len__(self) -> int:
        return len(self.frames)


def read_frame(path: PathLike) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.uint8).copy()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise SequenceFormatError(f"{path}: unreadable frame ({exc})") from None


def write_frame(path: PathLike, frame: np.ndarray) -> None:
    data = np.asarray(frame)
    if data.ndim != 2:
        raise ContractViolation(f"frames must be 2-D, got shape {data.shape}")
    Image.fromarray(np.clip(np.rint(data), 0, 255).astype(np.uint8)).save(path)


def _parse_row(line: str, width: Tuple[int, ...], where: str) -> List[float]:
    parts = [p for p in _SEPARATORS.split(line.strip()) if p]
    if len(parts) not in width:
        raise SequenceFormatError(f"{where}: expected {' or '.join(map(str, width))} values, got {line.strip()!r}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise SequenceFormatError(f"{where}: non-numeric value in {line.strip()!r}") from None


def _to_box(values: Sequence[float], where: str) -> BBox:
    x, y, w, h = values[:4]
    try:
        return BBox(x - 1.0, y - 1.0, w, h)
    except ContractViolation as exc:
        raise SequenceFormatError(f"{where}: {exc}") from None


def _rows(path: PathLike, width: Tuple[int, ...]) -> List[List[float]]:
    text = Path(path).read_text(encoding="utf-8")
    return [
        _parse_row(line, width, f"{path}:{number}")
        for number, line in enumerate(text.splitlines(), start=1)
        if line.strip()
    ]


def read_boxes(path: PathLike) -> List[BBox]:
    return [_to_box(row, f"{path}:{i + 1}") for i, row in enumerate(_rows(path, (4,)))]


def _box_line(box: BBox) -> str:
    return f"{box.x + 1.0:.4f},{box.y + 1.0:.4f},{box.w:.4f},{box.h:.4f}"


def write_boxes(path: PathLike, boxes: Sequence[BBox]) -> None:
    Path(path).write_text("".join(_box_line(b) + "\n" for b in boxes), encoding="utf-8")


def read_predictions(path: PathLike) -> Tuple[List[BBox], List[float]]:
    """Prediction rows carry an optional fifth score column."""
    rows = _rows(path, (4, 5))
    boxes = [_to_box(row, f"{path}:{i + 1}") for i, row in enumerate(rows)]
    scores = [row[4] if len(row) == 5 else 1.0 for row in rows]
    return boxes, scores


def write_predictions(path: PathLike, boxes: Sequence[BBox], scores: Sequence[float]) -> None:
    if len(boxes) != len(scores):
        raise ContractViolation(f"{len(boxes)} boxes but {len(scores)} scores")
    lines = [f"{_box_line(b)},{s:.6f}\n" for b, s in zip(boxes, scores)]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_sequence(directory: PathLike) -> LoadedSequence:
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"sequence directory {root} does not exist")
    gt_path = root / GROUNDTRUTH_FILE
    if not gt_path.is_file():
        raise FileNotFoundError(f"{gt_path} does not exist")
    frame_paths = sorted(root.glob("*.pgm"))
    if not frame_paths:
        raise SequenceFormatError(f"{root} holds no .pgm frames")
    boxes = read_boxes(gt_path)
    if len(boxes) != len(frame_paths) and len(boxes) != 1:
        raise SequenceFormatError(f"{root}: {len(frame_paths)} frames but {len(boxes)} ground-truth boxes")
    frames = [read_frame(p) for p in frame_paths]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise SequenceFormatError(f"{root}: frames differ in size: {sorted(shapes)}")
    logger.debug("read %d frames from %s", len(frames), root)
    return LoadedSequence(frames, boxes)


def write_sequence(directory: PathLike, frames: Sequence[np.ndarray], boxes: Sequence[BBox]) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    if len(frames) != len(boxes):
        raise ContractViolation(f"{len(frames)} frames but {len(boxes)} boxes")
    digits = max(4, len(str(len(frames))))
    for i, frame in enumerate(frames, start=1):
        write_frame(root / f"{i:0{digits}d}.pgm", frame)
    write_boxes(root / GROUNDTRUTH_FILE, boxes)
    logger.info("wrote %d frames to %s", len(frames), root)


def format_report(report: MetricReport) -> str:
    lines = [
        f"suc = {report.suc:.6f}",
        f"pre = {report.pre:.6f}",
        f"normp = {report.normp:.6f}",
        f"frames = {len(report)}",
    ]
    lines += [
        f"frame = {i + 1},{iou:.6f},{err:.4f}"
        for i, (iou, err) in enumerate(zip(report.iou, report.center_error))
    ]
    return "\n".join(lines) + "\n"


def write_report(path: PathLike, report: MetricReport) -> None:
    Path(path).write_text(format_report(report), encoding="utf-8")


def read_report(path: PathLike) -> Dict[str, float]:
    """Summary values of a report file (``suc``, ``pre``, ``normp``, ``frames``)."""
    summary: Dict[str, float] = {}
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep:
            raise SequenceFormatError(f"{path}:{number}: expected 'key = value'")
        if key != "frame":
            summary[key] = float(value)
    return summary
