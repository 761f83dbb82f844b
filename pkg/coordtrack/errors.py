"""Errors
===================
Exceptions raised by coordtrack. The CLI and the HTTP service translate
them into exit codes and status codes.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.


class CoordTrackError(Exception):
    """Base class of every error raised on purpose by coordtrack."""


class ContractViolation(CoordTrackError, ValueError):
    """A precondition of an operation does not hold (shape, range, frame)."""


class DecodeError(CoordTrackError):
    """A special token ended up in a coordinate slot of a generated box."""


class GenerationError(CoordTrackError):
    """A synthetic scene cannot be rendered (target left the frame)."""


class DivergenceError(CoordTrackError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, epoch: int, step: int, ce: float, siou: float) -> None:
        self.epoch = epoch
        self.step = step
        self.ce = ce
        self.siou = siou
        super().__init__(
            f"training diverged at epoch {epoch} step {step} (ce={ce!r}, siou={siou!r})"
        )


class SequenceFormatError(CoordTrackError):
    """A sequence, box, weights, scene or config file is malformed."""
