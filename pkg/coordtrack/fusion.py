"""Pyramid Fusion
===================
Multilevel progressive fusion of the search features: a three-level
pyramid {2x, 1x, 0.5x} built from f_x, fused top-down with UpFusion and
then bottom-up with DownFusion back to the input grid. The concatenation
(ConF) and addition (AddF) variants resize every level to the 1x grid
instead. Every variant is added back onto f_x.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import math
from dataclasses import dataclass
from typing import List
from typing import Optional
from typing import Sequence

import numpy as np

from coordtrack import layers
from coordtrack import tensor as T
from coordtrack.allowed_parameters import FusionMode
from coordtrack.errors import ContractViolation
from coordtrack.params import ParamStore
from coordtrack.tensor import Tensor

SCALES = (2.0, 1.0, 0.5)


@dataclass(frozen=True)
class FeaturePyramid:
    """Levels ordered fine -> coarse, each C x H_l x W_l."""

    levels: List[Tensor]
    scales: Sequence[float]

    def __post_init__(self) -> None:
        if len(self.levels) != len(self.scales) or not self.levels:
            raise ContractViolation("pyramid needs one scale per level")
        channels = {lvl.shape[0] for lvl in self.levels}
        if len(channels) != 1:
            raise ContractViolation(f"pyramid levels disagree on channels: {sorted(channels)}")
        for finer, coarser in zip(self.levels, self.levels[1:]):
            if finer.shape[1] != 2 * coarser.shape[1] or finer.shape[2] != 2 * coarser.shape[2]:
                raise ContractViolation(
                    f"adjacent pyramid levels {finer.shape} and {coarser.shape} differ by more than x2"
                )


def _init_stack(store: ParamStore, name: str, c: int, rng: np.random.Generator, out_std: Optional[float] = None) -> None:
    layers.init_conv(store, f"{name}.reduce", 2 * c, c, 1, rng)
    layers.init_conv(store, f"{name}.mix", c, c, 3, rng)
    layers.init_conv(store, f"{name}.out", c, c, 1, rng, std=out_std)


def init_params(store: ParamStore, mode: FusionMode, c: int, rng: np.random.Generator) -> None:
    """The last projection of every variant starts at zero, so a fresh ``fuse`` is the identity."""
    if mode is FusionMode.none:
        return
    layers.init_conv_transpose(store, "fuse.pyramid.up", c, c, 2, rng)
    if mode is FusionMode.mpfm:
        _init_stack(store, "fuse.up_mid", c, rng)
        _init_stack(store, "fuse.up_fine", c, rng)
        _init_stack(store, "fuse.down", c, rng, out_std=0.0)
    elif mode is FusionMode.conf:
        layers.init_conv(store, "fuse.conf.proj", len(SCALES) * c, c, 1, rng, std=0.0)
    elif mode is FusionMode.addf:
        for i in range(len(SCALES)):
            layers.init_conv(store, f"fuse.addf.proj{i}", c, c, 1, rng, std=0.0)


def build_pyramid(f_x: Tensor, store: ParamStore) -> FeaturePyramid:
    """2x by stride-2 transposed convolution, 1x as is, 0.5x by 2x2 max pool."""
    if f_x.ndim != 3:
        raise ContractViolation(f"build_pyramid() expects C x H x W, got {f_x.shape}")
    _, h, w = f_x.shape
    if h % 2 or w % 2:
        raise ContractViolation(f"build_pyramid() cannot pool an odd {h}x{w} grid")
    fine = T.conv_transpose2d(f_x, store["fuse.pyramid.up.weight"], store["fuse.pyramid.up.bias"], stride=2)
    return FeaturePyramid([fine, f_x, T.max_pool2x2(f_x)], SCALES)


def _conv_stack(x: Tensor, store: ParamStore, name: str) -> Tensor:
    x = layers.conv(x, store, f"{name}.reduce")
    x = layers.conv(x, store, f"{name}.mix", pad=1)
    return layers.conv(x, store, f"{name}.out")


def up_fusion(f_h: Tensor, f_l: Tensor, store: ParamStore, name: str) -> Tensor:
    """F_cat = [F_h, up2(F_l)]; Conv1x1(Conv3x3(Conv1x1(F_cat))) at F_h resolution."""
    if f_h.shape[1] != 2 * f_l.shape[1] or f_h.shape[2] != 2 * f_l.shape[2]:
        raise ContractViolation(f"up_fusion() needs a x2 resolution ratio, got {f_h.shape} and {f_l.shape}")
    return _conv_stack(T.concat([f_h, T.upsample_bilinear2x(f_l)], axis=0), store, name)


def down_fusion(f_l: Tensor, f_h: Tensor, store: ParamStore, name: str) -> Tensor:
    """F_cat = [pool2(F_l), F_h]; same conv stack at F_h resolution."""
    if f_l.shape[1] != 2 * f_h.shape[1] or f_l.shape[2] != 2 * f_h.shape[2]:
        raise ContractViolation(f"down_fusion() needs a x2 resolution ratio, got {f_l.shape} and {f_h.shape}")
    return _conv_stack(T.concat([T.max_pool2x2(f_l), f_h], axis=0), store, name)


def mpfm(f_x: Tensor, store: ParamStore) -> Tensor:
    """Top-down 0.5x -> 1x -> 2x, then bottom-up 2x -> 1x."""
    pyr = build_pyramid(f_x, store)
    fine, mid, coarse = pyr.levels
    mid_td = up_fusion(mid, coarse, store, "fuse.up_mid")
    fine_td = up_fusion(fine, mid_td, store, "fuse.up_fine")
    return down_fusion(fine_td, mid_td, store, "fuse.down")


def _to_unit_grid(level: Tensor, scale: float) -> Tensor:
    steps = int(round(math.log2(scale)))
    for _ in range(max(steps, 0)):
        level = T.max_pool2x2(level)
    for _ in range(max(-steps, 0)):
        level = T.upsample_bilinear2x(level)
    return level


def conf_fusion(pyr: FeaturePyramid, store: ParamStore) -> Tensor:
    """Resize every level to 1x, concatenate, project back to C with a 1x1 conv."""
    resized = [_to_unit_grid(lvl, s) for lvl, s in zip(pyr.levels, pyr.scales)]
    return layers.conv(T.concat(resized, axis=0), store, "fuse.conf.proj")


def addf_fusion(pyr: FeaturePyramid, store: ParamStore) -> Tensor:
    """Resize every level to 1x, project each with its own 1x1 conv, sum."""
    out = None
    for i, (lvl, s) in enumerate(zip(pyr.levels, pyr.scales)):
        projected = layers.conv(_to_unit_grid(lvl, s), store, f"fuse.addf.proj{i}")
        out = projected if out is None else out + projected
    assert out is not None
    return out


def fuse(f_x: Tensor, store: ParamStore, mode: FusionMode) -> Tensor:
    """``f_x`` plus the selected fusion of it; output has the input shape."""
    if mode is FusionMode.none:
        return f_x
    if mode is FusionMode.mpfm:
        return f_x + mpfm(f_x, store)
    pyr = build_pyramid(f_x, store)
    if mode is FusionMode.conf:
        return f_x + conf_fusion(pyr, store)
    return f_x + addf_fusion(pyr, store)
