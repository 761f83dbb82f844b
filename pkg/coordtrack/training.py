"""Training
===================
Teacher-forced training on synthetic sequences with AdamW and two
learning-rate groups (encoder, everything else).
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import logging
import math
from dataclasses import dataclass
from dataclasses import field
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from coordtrack.allowed_parameters import LrSchedule
from coordtrack.config import ModelConfig
from coordtrack.errors import ContractViolation
from coordtrack.errors import DivergenceError
from coordtrack.model import TrackingModel
from coordtrack.params import ParamStore
from coordtrack.synth import SynthSequence
from coordtrack.tensor import no_grad
from coordtrack.tracker import crop_search
from coordtrack.tracker import crop_template
from coordtrack.tracker import map_box_to_crop
from coordtrack.vocab import BBox

logger = logging.getLogger(__name__)

ENCODER_PREFIX = "enc."
PROBE_SAMPLES = 32
MIN_LR_RATIO = 0.05


@dataclass(frozen=True)
class TrainingSample:
    fixed_template: np.ndarray
    dynamic_template: np.ndarray
    search: np.ndarray
    box: BBox


@dataclass
class TrainingResult:
    model: TrackingModel
    loss_curve: List[float] = field(default_factory=list)
    ce_curve: List[float] = field(default_factory=list)
    siou_curve: List[float] = field(default_factory=list)
    probe_losses: List[float] = field(default_factory=list)

    @property
    def store(self) -> ParamStore:
        return self.model.store


def _visible_frames(seq: SynthSequence) -> List[int]:
    if not seq.occluded:
        return list(range(len(seq)))
    return [i for i, hidden in enumerate(seq.occluded) if not hidden]


def jitter_box(box: BBox, rng: np.random.Generator, center_jitter: float, scale_jitter: float) -> BBox:
    """Shift the centre by N(0, center_jitter * sqrt(wh)) per axis and rescale log-normally."""
    size = math.sqrt(box.area)
    cx, cy = box.center
    dx, dy = rng.normal(0.0, center_jitter * size, size=2)
    scale = float(np.exp(rng.normal(0.0, scale_jitter)))
    w, h = box.w * scale, box.h * scale
    return BBox(cx + float(dx) - w / 2.0, cy + float(dy) - h / 2.0, w, h, box.frame)


def draw_sample(seq: SynthSequence, rng: np.random.Generator, cfg: ModelConfig) -> TrainingSample:
    """Fixed template, dynamic template and search frame within ``max_frame_gap`` of each other."""
    visible = _visible_frames(seq)
    if not visible:
        raise ContractViolation("sequence has no frame with a visible target")
    s = visible[int(rng.integers(len(visible)))]
    window = [i for i in visible if s - cfg.max_frame_gap <= i <= s]
    f = window[int(rng.integers(len(window)))]
    later = [i for i in window if i >= f]
    d = later[int(rng.integers(len(later)))]
    fixed = crop_template(seq.frames[f], seq.boxes[f], cfg.template_size, cfg.template_factor)
    dynamic = crop_template(seq.frames[d], seq.boxes[d], cfg.template_size, cfg.template_factor)
    anchor = jitter_box(seq.boxes[s], rng, cfg.center_jitter, cfg.scale_jitter)
    search, spec = crop_search(seq.frames[s], anchor, cfg.search_size, cfg.search_factor)
    return TrainingSample(fixed, dynamic, search, map_box_to_crop(seq.boxes[s], spec))


def sample_training_set(
    sequences: Sequence[SynthSequence],
    count: int,
    rng: np.random.Generator,
    cfg: ModelConfig,
) -> List[TrainingSample]:
    if not sequences:
        raise ContractViolation("training needs at least one sequence")
    return [draw_sample(sequences[int(rng.integers(len(sequences)))], rng, cfg) for _ in range(count)]


class AdamW:
    """Adam with decoupled weight decay on matrices and conv kernels.

    Parameters named ``enc.*`` use ``lr_encoder``; all others use ``lr_other``.
    """

    def __init__(
        self,
        store: ParamStore,
        lr_encoder: float,
        lr_other: float,
        weight_decay: float = 1e-4,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        self.store = store
        self.lr_encoder = lr_encoder
        self.lr_other = lr_other
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.names = store.names(trainable_only=True)
        self.m: Dict[str, np.ndarray] = {n: np.zeros_like(store[n].data) for n in self.names}
        self.v: Dict[str, np.ndarray] = {n: np.zeros_like(store[n].data) for n in self.names}

    def lr_for(self, name: str) -> float:
        return self.lr_encoder if name.startswith(ENCODER_PREFIX) else self.lr_other

    def step(self, scale: float = 1.0) -> None:
        """One update with both learning rates multiplied by ``scale``."""
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name in self.names:
            param = self.store[name]
            g = self.store.grad(name)
            lr = self.lr_for(name) * scale
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if param.data.ndim >= 2 and self.weight_decay:
                param.data -= lr * self.weight_decay * param.data
            param.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def lr_multiplier(step: int, total_steps: int, schedule: LrSchedule, warmup_fraction: float) -> float:
    """Factor on both learning rates at 1-based optimiser step ``step``.

    Linear warmup over the first ``warmup_fraction`` of the steps, then flat
    or a half cosine down to ``MIN_LR_RATIO``.
    """
    if not 1 <= step <= total_steps:
        raise ContractViolation(f"step {step} outside 1..{total_steps}")
    warmup = int(round(warmup_fraction * total_steps))
    if step <= warmup:
        return step / warmup
    if schedule is LrSchedule.constant:
        return 1.0
    progress = (step - warmup) / max(total_steps - warmup, 1)
    return MIN_LR_RATIO + (1.0 - MIN_LR_RATIO) * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_gradients(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; 0 disables."""
    names = store.names(trainable_only=True)
    total = math.sqrt(float(np.sum([np.sum(store.grad(n) ** 2) for n in names])))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for n in names:
            store.grad(n)[...] *= scale
    return total


def probe_loss(model: TrackingModel, samples: Sequence[TrainingSample]) -> float:
    with no_grad():
        losses = [
            model.loss(s.fixed_template, s.dynamic_template, s.search, s.box).total for s in samples
        ]
    return float(np.mean(losses))


def train_toy(
    cfg: ModelConfig,
    sequences: Sequence[SynthSequence],
    epochs: Optional[int] = None,
    seed: Optional[int] = None,
    model: Optional[TrackingModel] = None,
) -> TrainingResult:
    """Train for ``epochs`` (default ``cfg.epochs``) and record per-epoch mean losses.

    ``probe_losses[0]`` is the loss of the untrained model on a fixed probe
    set; entry ``k`` is the loss on the same set after epoch ``k``.
    """
    epochs = cfg.epochs if epochs is None else epochs
    seed = cfg.seed if seed is None else seed
    if epochs < 0:
        raise ContractViolation(f"epochs must be non-negative, got {epochs}")
    model = model if model is not None else TrackingModel(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    probes = sample_training_set(sequences, min(PROBE_SAMPLES, cfg.samples_per_epoch), rng, cfg)
    result = TrainingResult(model, probe_losses=[probe_loss(model, probes)])
    store = model.store
    opt = AdamW(
        store,
        cfg.lr_encoder,
        cfg.lr_other,
        cfg.weight_decay,
        (cfg.adam_beta1, cfg.adam_beta2),
        cfg.adam_eps,
    )
    steps_per_epoch = math.ceil(cfg.samples_per_epoch / cfg.batch_size)
    total_steps = epochs * steps_per_epoch
    global_step = 0
    for epoch in range(1, epochs + 1):
        samples = sample_training_set(sequences, cfg.samples_per_epoch, rng, cfg)
        totals, ces, sious = [], [], []
        for step, start in enumerate(range(0, len(samples), cfg.batch_size), start=1):
            batch = samples[start:start + cfg.batch_size]
            store.zero_grad()
            for sample in batch:
                report = model.loss(sample.fixed_template, sample.dynamic_template, sample.search, sample.box)
                if not math.isfinite(report.total):
                    raise DivergenceError(epoch, step, report.ce, report.siou)
                store.backward(report.tensor, scale=1.0 / len(batch))
                totals.append(report.total)
                ces.append(report.ce)
                sious.append(report.siou)
            if not math.isfinite(clip_gradients(store, cfg.grad_clip)):
                raise DivergenceError(epoch, step, report.ce, report.siou)
            global_step += 1
            opt.step(lr_multiplier(global_step, total_steps, cfg.lr_schedule, cfg.warmup_fraction))
        result.loss_curve.append(float(np.mean(totals)))
        result.ce_curve.append(float(np.mean(ces)))
        result.siou_curve.append(float(np.mean(sious)))
        result.probe_losses.append(probe_loss(model, probes))
        logger.info(
            "epoch %d/%d loss=%.4f ce=%.4f siou=%.4f probe=%.4f lr_scale=%.3f",
            epoch, epochs, result.loss_curve[-1], result.ce_curve[-1], result.siou_curve[-1],
            result.probe_losses[-1], lr_multiplier(global_step, total_steps, cfg.lr_schedule, cfg.warmup_fraction),
        )
    return result
