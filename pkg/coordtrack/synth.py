"""Synthetic Sequences
===================
Thermal-like test sequences: Gaussian-profile blobs over a noisy flat
background, one of them the tracked target. Identical scenes render
bit-identical sequences.

Scene files are flat ``key = value`` text; ``distractor`` and
``occlusion`` may repeat::

    width = 128
    height = 128
    length = 30
    background = 60
    noise = 4
    seed = 7
    target = 40,50,16,12,180,1.5,0.5
    scale_rate = 0.002
    distractor = 90,90,10,10,110,-1,0
    occlusion = 12-14

Occlusion ranges are inclusive, 0-indexed frame numbers.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import logging
import math
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Dict
from typing import List
from typing import Optional
from typing import Tuple
from typing import Union

import numpy as np

from coordtrack.errors import ContractViolation
from coordtrack.errors import GenerationError
from coordtrack.errors import SequenceFormatError
from coordtrack.vocab import BBox

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Blob:
    """Gaussian blob; the profile has sigma = extent / 4 per axis."""

    cx: float
    cy: float
    w: float
    h: float
    intensity: float
    vx: float = 0.0
    vy: float = 0.0
    scale_rate: float = 0.0

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ContractViolation(f"blob extents must be positive, got {self.w}x{self.h}")

    def at(self, t: int) -> Tuple[float, float, float, float]:
        """Centre and extents at frame ``t``."""
        grow = (1.0 + self.scale_rate) ** t
        return self.cx + self.vx * t, self.cy + self.vy * t, self.w * grow, self.h * grow


@dataclass(frozen=True)
class SynthScene:
    target: Blob
    width: int = 128
    height: int = 128
    length: int = 30
    background: float = 60.0
    noise: float = 4.0
    distractors: Tuple[Blob, ...] = ()
    occlusions: Tuple[Tuple[int, int], ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1 or self.length < 1:
            raise ContractViolation(f"scene needs positive size and length, got {self.width}x{self.height}x{self.length}")
        if self.noise < 0:
            raise ContractViolation(f"noise level must be non-negative, got {self.noise}")
        for start, end in self.occlusions:
            if not 0 <= start <= end:
                raise ContractViolation(f"bad occlusion range {start}-{end}")

    def occluded(self, t: int) -> bool:
        return any(start <= t <= end for start, end in self.occlusions)


@dataclass
class SynthSequence:
    frames: List[np.ndarray]
    boxes: List[BBox]
    occluded: List[bool] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)


def _render_blob(canvas: np.ndarray, xs: np.ndarray, ys: np.ndarray, state: Tuple[float, float, float, float], intensity: float) -> None:
    cx, cy, w, h = state
    sx, sy = w / 4.0, h / 4.0
    canvas += intensity * np.exp(-(((xs - cx) ** 2) / (2 * sx * sx) + ((ys - cy) ** 2) / (2 * sy * sy)))


def gen_sequence(scene: SynthScene) -> SynthSequence:
    """Render every frame with its tight ground-truth box."""
    rng = np.random.default_rng(scene.seed)
    ys, xs = np.mgrid[0:scene.height, 0:scene.width].astype(np.float64) + 0.5
    frames: List[np.ndarray] = []
    boxes: List[BBox] = []
    occluded: List[bool] = []
    for t in range(scene.length):
        cx, cy, w, h = scene.target.at(t)
        x0, y0 = cx - w / 2.0, cy - h / 2.0
        if x0 + w <= 0 or y0 + h <= 0 or x0 >= scene.width or y0 >= scene.height:
            raise GenerationError(f"target left the {scene.width}x{scene.height} frame at frame {t}")
        canvas = np.full((scene.height, scene.width), float(scene.background))
        for blob in scene.distractors:
            _render_blob(canvas, xs, ys, blob.at(t), blob.intensity)
        hidden = scene.occluded(t)
        if not hidden:
            _render_blob(canvas, xs, ys, (cx, cy, w, h), scene.target.intensity)
        if scene.noise > 0:
            canvas += rng.normal(0.0, scene.noise, size=canvas.shape)
        frames.append(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))
        boxes.append(BBox(x0, y0, w, h))
        occluded.append(hidden)
    return SynthSequence(frames, boxes, occluded)


def random_scene(
    rng: np.random.Generator,
    width: int = 128,
    height: int = 128,
    length: int = 30,
    max_distractors: int = 2,
) -> SynthScene:
    """A scene whose target stays fully inside the frame for all ``length`` frames."""
    size = float(rng.uniform(10.0, 20.0))
    aspect = float(rng.uniform(0.7, 1.4))
    w, h = size * math.sqrt(aspect), size / math.sqrt(aspect)
    scale_rate = float(rng.uniform(-0.004, 0.004))
    grow = max(1.0, (1.0 + scale_rate) ** max(length - 1, 0))
    mx, my = 0.6 * w * grow + 1.0, 0.6 * h * grow + 1.0
    if 2 * mx >= width or 2 * my >= height:
        raise ContractViolation(f"frame {width}x{height} too small for a {w:.1f}x{h:.1f} target")
    start = rng.uniform([mx, my], [width - mx, height - my])
    end = rng.uniform([mx, my], [width - mx, height - my])
    velocity = (end - start) / max(length - 1, 1)
    target = Blob(
        float(start[0]), float(start[1]), w, h,
        intensity=float(rng.uniform(120.0, 200.0)),
        vx=float(velocity[0]),
        vy=float(velocity[1]),
        scale_rate=scale_rate,
    )
    distractors = tuple(
        Blob(*(float(v) for v in rng.uniform(
            [0.0, 0.0, 6.0, 6.0, 40.0, -1.0, -1.0],
            [width, height, 18.0, 18.0, 110.0, 1.0, 1.0],
        )))
        for _ in range(int(rng.integers(0, max_distractors + 1)))
    )
    occlusions: Tuple[Tuple[int, int], ...] = ()
    if length > 4 and rng.random() < 0.2:
        first = int(rng.integers(1, length - 3))
        occlusions = ((first, first + int(rng.integers(0, 3))),)
    return SynthScene(
        target=target,
        width=width,
        height=height,
        length=length,
        background=float(rng.uniform(30.0, 80.0)),
        noise=float(rng.uniform(1.0, 6.0)),
        distractors=distractors,
        occlusions=occlusions,
        seed=int(rng.integers(2 ** 31)),
    )


def random_sequences(count: int, seed: int, width: int = 128, height: int = 128, length: int = 30) -> List[SynthSequence]:
    rng = np.random.default_rng(seed)
    return [gen_sequence(random_scene(rng, width, height, length)) for _ in range(count)]


def _floats(value: str, count: int, key: str, source: str) -> List[float]:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != count:
        raise SequenceFormatError(f"{source}: {key} needs {count} comma-separated values, got {value!r}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise SequenceFormatError(f"{source}: {key} has a non-numeric value in {value!r}") from None


_SCALARS = {"width": int, "height": int, "length": int, "background": float, "noise": float, "seed": int, "scale_rate": float}


def parse_scene(text: str, source: str = "<string>") -> SynthScene:
    scalars: Dict[str, Union[int, float]] = {}
    target: Optional[List[float]] = None
    distractors: List[Blob] = []
    occlusions: List[Tuple[int, int]] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        where = f"{source}:{number}"
        if not sep:
            raise SequenceFormatError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        if key == "target":
            target = _floats(value, 7, key, where)
        elif key == "distractor":
            cx, cy, w, h, inten, vx, vy = _floats(value, 7, key, where)
            try:
                distractors.append(Blob(cx, cy, w, h, inten, vx, vy))
            except ContractViolation as exc:
                raise SequenceFormatError(f"{where}: {exc}") from None
        elif key == "occlusion":
            start, dash, end = value.partition("-")
            if not dash or not start.strip().isdigit() or not end.strip().isdigit():
                raise SequenceFormatError(f"{where}: occlusion must read 'start-end', got {value!r}")
            occlusions.append((int(start), int(end)))
        elif key in _SCALARS:
            try:
                scalars[key] = _SCALARS[key](value)
            except ValueError:
                raise SequenceFormatError(f"{where}: {key} has a malformed value {value!r}") from None
        else:
            raise SequenceFormatError(f"{where}: unknown scene key {key!r}")
    if target is None:
        raise SequenceFormatError(f"{source}: scene has no target line")
    scale_rate = float(scalars.pop("scale_rate", 0.0))
    try:
        cx, cy, w, h, inten, vx, vy = target
        return SynthScene(
            target=Blob(cx, cy, w, h, inten, vx, vy, scale_rate),
            distractors=tuple(distractors),
            occlusions=tuple(occlusions),
            **scalars,  # type: ignore[arg-type]
        )
    except ContractViolation as exc:
        raise SequenceFormatError(f"{source}: {exc}") from None


def load_scene(path: Union[str, Path]) -> SynthScene:
    return parse_scene(Path(path).read_text(encoding="utf-8"), source=str(path))


def _blob_line(blob: Blob) -> str:
    return ",".join(repr(float(v)) for v in (blob.cx, blob.cy, blob.w, blob.h, blob.intensity, blob.vx, blob.vy))


def dump_scene(scene: SynthScene, path: Union[str, Path]) -> None:
    lines = [
        f"width = {scene.width}",
        f"height = {scene.height}",
        f"length = {scene.length}",
        f"background = {scene.background!r}",
        f"noise = {scene.noise!r}",
        f"seed = {scene.seed}",
        f"target = {_blob_line(scene.target)}",
        f"scale_rate = {scene.target.scale_rate!r}",
    ]
    lines += [f"distractor = {_blob_line(b)}" for b in scene.distractors]
    lines += [f"occlusion = {start}-{end}" for start, end in scene.occlusions]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
