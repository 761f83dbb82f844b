"""Bench
===================
Toy-scale benchmark: train on synthetic sequences, track held-out
sequences, average Suc/Pre/NormP, and compare fusion variants.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import logging
from dataclasses import dataclass
from dataclasses import field
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from coordtrack.allowed_parameters import FusionMode
from coordtrack.config import ModelConfig
from coordtrack.metrics import MetricReport
from coordtrack.metrics import evaluate
from coordtrack.synth import SynthSequence
from coordtrack.synth import random_sequences
from coordtrack.tracker import Predictor
from coordtrack.tracker import TrackerConfig
from coordtrack.tracker import track_sequence
from coordtrack.training import TrainingResult
from coordtrack.training import train_toy

logger = logging.getLogger(__name__)

ABLATION_MARGIN = 0.05
HELDOUT_SEED_OFFSET = 1_000_003


@dataclass(frozen=True)
class BenchReport:
    suc: float
    pre: float
    normp: float
    per_sequence: List[MetricReport]


@dataclass
class AblationReport:
    results: Dict[FusionMode, BenchReport] = field(default_factory=dict)
    loss_curves: Dict[FusionMode, List[float]] = field(default_factory=dict)

    def beats(self, other: FusionMode) -> Optional[bool]:
        """Whether mpfm scores at least ``other`` on Suc (None when either is missing)."""
        if FusionMode.mpfm not in self.results or other not in self.results:
            return None
        return self.results[FusionMode.mpfm].suc >= self.results[other].suc

    @property
    def hard_failure(self) -> bool:
        """mpfm trails every other fusion variant by more than the margin."""
        if FusionMode.mpfm not in self.results:
            return False
        rivals = [m for m in self.results if m is not FusionMode.mpfm and m is not FusionMode.none]
        if not rivals:
            return False
        mpfm = self.results[FusionMode.mpfm].suc
        return all(mpfm < self.results[m].suc - ABLATION_MARGIN for m in rivals)


def make_datasets(cfg: ModelConfig, seed: Optional[int] = None) -> Tuple[List[SynthSequence], List[SynthSequence]]:
    """Training and held-out synthetic sets drawn from disjoint seeds."""
    seed = cfg.seed if seed is None else seed
    size, length = cfg.frame_size, cfg.sequence_length
    train = random_sequences(cfg.train_sequences, seed, size, size, length)
    heldout = random_sequences(cfg.heldout_sequences, seed + HELDOUT_SEED_OFFSET, size, size, length)
    return train, heldout


def evaluate_sequences(model: Predictor, sequences: Sequence[SynthSequence], cfg: TrackerConfig) -> BenchReport:
    """Track each sequence from its first ground-truth box; average the per-sequence metrics."""
    reports = []
    for seq in sequences:
        result = track_sequence(model, seq.frames, seq.boxes[0], cfg)
        reports.append(evaluate(result.boxes, seq.boxes))
    return BenchReport(
        suc=float(np.mean([r.suc for r in reports])),
        pre=float(np.mean([r.pre for r in reports])),
        normp=float(np.mean([r.normp for r in reports])),
        per_sequence=reports,
    )


def train_and_evaluate(
    cfg: ModelConfig,
    train: Sequence[SynthSequence],
    heldout: Sequence[SynthSequence],
    seed: Optional[int] = None,
) -> Tuple[TrainingResult, BenchReport]:
    result = train_toy(cfg, train, seed=seed)
    report = evaluate_sequences(result.model, heldout, TrackerConfig.from_model_config(cfg))
    logger.info(
        "fusion=%s suc=%.3f pre=%.3f normp=%.3f",
        cfg.fusion.value, report.suc, report.pre, report.normp,
    )
    return result, report


def run_ablation(
    cfg: ModelConfig,
    modes: Sequence[FusionMode] = (FusionMode.mpfm, FusionMode.conf, FusionMode.addf),
    seed: Optional[int] = None,
) -> AblationReport:
    """Same training and held-out data, one model per fusion mode."""
    train, heldout = make_datasets(cfg, seed)
    ablation = AblationReport()
    for mode in modes:
        result, report = train_and_evaluate(cfg.replace(fusion=mode), train, heldout, seed)
        ablation.results[mode] = report
        ablation.loss_curves[mode] = result.loss_curve
    for rival in (FusionMode.conf, FusionMode.addf):
        verdict = ablation.beats(rival)
        if verdict is False:
            logger.warning("mpfm scored below %s on Suc", rival.value)
    return ablation


def format_ablation(ablation: AblationReport) -> str:
    lines = []
    for mode, report in ablation.results.items():
        lines.append(f"{mode.value}.suc = {report.suc:.6f}")
        lines.append(f"{mode.value}.pre = {report.pre:.6f}")
        lines.append(f"{mode.value}.normp = {report.normp:.6f}")
    for rival in (FusionMode.conf, FusionMode.addf):
        verdict = ablation.beats(rival)
        if verdict is not None:
            lines.append(f"mpfm_ge_{rival.value} = {'true' if verdict else 'false'}")
    lines.append(f"hard_failure = {'true' if ablation.hard_failure else 'false'}")
    return "\n".join(lines) + "\n"
