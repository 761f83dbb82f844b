"""Allowed Parameters
===================
Enumerated parameters accepted by the config files, the CLI and the
HTTP service.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
from enum import Enum


class FusionMode(str, Enum):
    """Fusion applied to the search features between encoder and decoder,
    default: mpfm
    """

    mpfm = "mpfm"
    conf = "conf"
    addf = "addf"
    none = "none"


class BoxFrame(str, Enum):
    """Frame of reference a box is expressed in."""

    image_px = "image-px"
    crop_px = "crop-px"
    normalized = "normalized"


class StreamOrigin(str, Enum):
    """Source image of a patch sequence."""

    template_fixed = "template-fixed"
    template_dynamic = "template-dynamic"
    search = "search"


class LrSchedule(str, Enum):
    """Learning-rate schedule over all optimiser steps,
    default: constant
    """

    constant = "constant"
    cosine = "cosine"
