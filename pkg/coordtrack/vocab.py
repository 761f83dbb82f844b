"""Coordinate Vocabulary
===================
Boxes and the shared token vocabulary: coordinate bins ``1..nbins``,
then ``end`` (``nbins + 1``) and ``cmd`` (``nbins + 2``).

The decoder head predicts ``nbins + 1`` rows (bins plus ``end``);
``cmd`` only ever appears as decoder input.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import math
from dataclasses import dataclass
from typing import List
from typing import Sequence
from typing import Tuple

import numpy as np

from coordtrack.allowed_parameters import BoxFrame
from coordtrack.errors import ContractViolation
from coordtrack.errors import DecodeError


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, top-left corner plus extents."""

    x: float
    y: float
    w: float
    h: float
    frame: BoxFrame = BoxFrame.image_px

    def __post_init__(self) -> None:
        values = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise ContractViolation(f"box has non-finite values: {values}")
        if self.w <= 0 or self.h <= 0:
            raise ContractViolation(f"box extents must be positive, got w={self.w}, h={self.h}")
        if self.frame is BoxFrame.normalized and not all(0.0 <= v <= 1.0 for v in values):
            raise ContractViolation(f"normalized box outside [0, 1]: {values}")

    @property
    def center(self) -> Tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return self.x, self.y, self.w, self.h

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.float64)


def quantize(v: float, nbins: int) -> int:
    """Map a normalized value to its bin token in ``[1, nbins]``."""
    if math.isnan(v) or math.isinf(v):
        raise ContractViolation(f"cannot quantize non-finite value {v!r}")
    v = min(max(v, 0.0), 1.0)
    return min(max(int(math.floor(v * nbins)) + 1, 1), nbins)


def dequantize(token: int, nbins: int) -> float:
    """Bin centre of a coordinate token."""
    if not 1 <= token <= nbins:
        raise ContractViolation(f"token {token} outside coordinate range [1, {nbins}]")
    return (token - 0.5) / nbins


@dataclass(frozen=True)
class CoordVocab:
    """Shared vocabulary of coordinate bins and the two special tokens."""

    nbins: int = 4000

    def __post_init__(self) -> None:
        if self.nbins < 1:
            raise ContractViolation(f"nbins must be positive, got {self.nbins}")

    @property
    def end_token(self) -> int:
        return self.nbins + 1

    @property
    def cmd_token(self) -> int:
        return self.nbins + 2

    @property
    def output_size(self) -> int:
        """Rows of the decoder head: every bin plus ``end``."""
        return self.nbins + 1

    @property
    def embedding_size(self) -> int:
        """Rows of the input embedding table: bins, ``end`` and ``cmd``."""
        return self.nbins + 2

    def is_coordinate(self, token: int) -> bool:
        return 1 <= token <= self.nbins

    def quantize(self, v: float) -> int:
        return quantize(v, self.nbins)

    def dequantize(self, token: int) -> float:
        return dequantize(token, self.nbins)

    def bin_centers(self) -> np.ndarray:
        return (np.arange(1, self.nbins + 1, dtype=np.float64) - 0.5) / self.nbins

    def encode_box(self, box: BBox) -> List[int]:
        """Decoder input sequence ``[cmd, x, y, w, h]``."""
        if box.frame is not BoxFrame.normalized:
            raise ContractViolation(f"encode_box() needs a normalized box, got frame {box.frame.value}")
        return [self.cmd_token] + [self.quantize(v) for v in box.as_tuple()]

    def target_tokens(self, box: BBox) -> List[int]:
        """Teacher-forcing targets ``[x, y, w, h, end]``."""
        return self.encode_box(box)[1:] + [self.end_token]

    def decode_tokens(self, tokens: Sequence[int]) -> BBox:
        if len(tokens) != 4:
            raise ContractViolation(f"decode_tokens() needs exactly 4 tokens, got {len(tokens)}")
        if not all(self.is_coordinate(int(t)) for t in tokens):
            raise DecodeError(f"degenerate generation, special token among {list(tokens)}")
        x, y, w, h = (self.dequantize(int(t)) for t in tokens)
        floor = 1.0 / self.nbins
        return BBox(x, y, max(w, floor), max(h, floor), BoxFrame.normalized)
