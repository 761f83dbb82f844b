"""Gradient Check
===================
Central-difference verification of the taped gradients, for single
kernel ops up to the full toy tracking pipeline.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import logging
import math
from dataclasses import dataclass
from typing import Callable
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from coordtrack import decoder
from coordtrack import fusion
from coordtrack import tensor as T
from coordtrack.allowed_parameters import BoxFrame
from coordtrack.allowed_parameters import FusionMode
from coordtrack.config import ModelConfig
from coordtrack.config import toy_config
from coordtrack.errors import ContractViolation
from coordtrack.model import TrackingModel
from coordtrack.objective import siou_term
from coordtrack.objective import soft_box
from coordtrack.params import ParamStore
from coordtrack.tensor import Tensor
from coordtrack.vocab import BBox
from coordtrack.vocab import CoordVocab

logger = logging.getLogger(__name__)

Objective = Callable[[], Tensor]

MIN_EPS = 1e-6
MAX_EPS = 1e-3


@dataclass(frozen=True)
class GradCheckReport:
    """``nonfinite_at`` lists (parameter index, flat entry index) of every checked entry
    whose analytic or numeric derivative was not finite.
    """

    name: str
    max_rel_error: float
    probes: int
    tol: float
    nonfinite_at: Tuple[Tuple[int, int], ...] = ()

    @property
    def nonfinite(self) -> int:
        return len(self.nonfinite_at)

    @property
    def passed(self) -> bool:
        return not self.nonfinite_at and self.max_rel_error < self.tol


def relative_error(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    f: Objective,
    params: Sequence[Tensor],
    eps: float = 1e-6,
    tol: float = 1e-4,
    probes: Optional[int] = 2,
    seed: int = 0,
    name: str = "check",
) -> GradCheckReport:
    """Compare d f / d p against central differences at ``probes`` entries per tensor.

    ``probes=None`` checks every entry. ``f`` must rebuild its graph on
    every call; parameters are perturbed in place and restored.
    """
    if not MIN_EPS <= eps <= MAX_EPS:
        raise ContractViolation(f"eps {eps!r} outside [{MIN_EPS}, {MAX_EPS}]")
    rng = np.random.default_rng(seed)
    grads = T.grad(f(), params)
    worst, count = 0.0, 0
    nonfinite_at: List[Tuple[int, int]] = []
    for which, (param, g) in enumerate(zip(params, grads)):
        flat = param.data.reshape(-1)
        size = flat.size
        picks = np.arange(size) if probes is None or probes >= size else rng.choice(size, probes, replace=False)
        for idx in picks:
            original = flat[idx]
            with T.no_grad():
                flat[idx] = original + eps
                plus = f().item()
                flat[idx] = original - eps
                minus = f().item()
            flat[idx] = original
            numeric = (plus - minus) / (2.0 * eps)
            analytic = float(g.reshape(-1)[idx])
            count += 1
            if not (np.isfinite(numeric) and np.isfinite(analytic)):
                nonfinite_at.append((which, int(idx)))
                continue
            worst = max(worst, relative_error(analytic, numeric))
    report = GradCheckReport(name, worst, count, tol, tuple(nonfinite_at))
    logger.info("%s: max relative error %.3e over %d probes", name, worst, count)
    if nonfinite_at:
        logger.warning("%s: non-finite derivative at %s", name, nonfinite_at)
    return report


class _Weighted:
    """Scalarise a tensor-valued function with a fixed random weighting."""

    def __init__(self, fn: Callable[[], Tensor], rng: np.random.Generator) -> None:
        self.fn = fn
        self.rng = rng
        self.weights: Optional[np.ndarray] = None

    def __call__(self) -> Tensor:
        out = self.fn()
        if self.weights is None:
            self.weights = self.rng.normal(size=out.shape)
        return T.sum(out * self.weights)


def _leaf(rng: np.random.Generator, *shape: int, scale: float = 1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _trainable(store: ParamStore) -> List[Tensor]:
    return [store[n] for n in store.names(trainable_only=True)]


def _randomize_fusion(store: ParamStore, rng: np.random.Generator) -> None:
    """Replace the zero-started fusion weights so every pyramid path carries gradient."""
    for name in store.names(prefix="fuse.", trainable_only=True):
        shape = store[name].shape
        std = 1.0 / math.sqrt(int(np.prod(shape[1:]))) if len(shape) == 4 else 0.1
        store.assign(name, rng.normal(0.0, std, size=shape))


def _kernel_cases(rng: np.random.Generator) -> List[Tuple[str, Objective, List[Tensor]]]:
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 5)
    u, v = _leaf(rng, 3, 4), _leaf(rng, 4)
    s = _leaf(rng, 3, 6)
    x, gamma, beta = _leaf(rng, 4, 8), _leaf(rng, 8), _leaf(rng, 8)
    c1, c2 = _leaf(rng, 2, 3), _leaf(rng, 2, 2)
    img, w3, b3 = _leaf(rng, 2, 6, 6), _leaf(rng, 3, 2, 3, 3, scale=0.3), _leaf(rng, 3)
    w2 = _leaf(rng, 3, 2, 2, 2, scale=0.3)
    small, wt, bt = _leaf(rng, 2, 3, 3), _leaf(rng, 2, 3, 2, 2, scale=0.5), _leaf(rng, 3)
    pool = _leaf(rng, 2, 4, 4)
    up = _leaf(rng, 2, 3, 3)

    def elementwise() -> Tensor:
        p = T.exp(u) + T.log(u * u + 1.0) + T.sqrt(v * v + 1.0) + T.sin(u) * v
        q = T.power(u, 3.0) / (v * v + 2.0) - T.absolute(u)
        r = T.maximum(u, v) + T.minimum(u, 0.5 * v) + T.arcsin(0.5 * T.sin(u))
        return p + q + r - u

    return [
        ("matmul", _Weighted(lambda: T.matmul(a, b), rng), [a, b]),
        ("elementwise", _Weighted(elementwise, rng), [u, v]),
        ("softmax", _Weighted(lambda: T.softmax(s, axis=-1), rng), [s]),
        ("log_softmax", _Weighted(lambda: T.log_softmax(s, axis=-1), rng), [s]),
        ("layer_norm", _Weighted(lambda: T.layer_norm(x, gamma, beta), rng), [x, gamma, beta]),
        ("gelu", _Weighted(lambda: T.gelu(x), rng), [x]),
        ("concat", _Weighted(lambda: T.concat([c1, c2], axis=1)[1:, ::2], rng), [c1, c2]),
        ("reduce", _Weighted(lambda: T.mean(T.transpose(T.reshape(u, (4, 3))), axis=0) * T.sum(v), rng), [u, v]),
        ("conv2d", _Weighted(lambda: T.conv2d(img, w3, b3, stride=1, pad=1), rng), [img, w3, b3]),
        ("conv2d_strided", _Weighted(lambda: T.conv2d(img, w2, None, stride=2, pad=0), rng), [img, w2]),
        ("conv_transpose2d", _Weighted(lambda: T.conv_transpose2d(small, wt, bt, stride=2), rng), [small, wt, bt]),
        ("max_pool2x2", _Weighted(lambda: T.max_pool2x2(pool), rng), [pool]),
        ("upsample_bilinear2x", _Weighted(lambda: T.upsample_bilinear2x(up), rng), [up]),
    ]


def _fusion_case(mode: FusionMode, rng: np.random.Generator) -> Tuple[str, Objective, List[Tensor]]:
    store = ParamStore()
    fusion.init_params(store, mode, 4, rng)
    _randomize_fusion(store, rng)
    f_x = _leaf(rng, 4, 4, 4)
    return f"fusion_{mode.value}", _Weighted(lambda: fusion.fuse(f_x, store, mode), rng), [f_x] + _trainable(store)


def _decoder_case(rng: np.random.Generator) -> Tuple[str, Objective, List[Tensor]]:
    cfg = decoder.DecoderConfig(layers=1, hidden=8, heads=2, mlp_ratio=2)
    vocab = CoordVocab(12)
    store = ParamStore()
    decoder.init_params(store, cfg, 6, vocab, rng)
    f_x = _leaf(rng, 5, 6)
    tokens = [vocab.cmd_token, 3, 7, 12, 1]

    def logits() -> Tensor:
        memory = decoder.project_memory(f_x, store)
        return decoder.teacher_forcing_logits(memory, tokens, store, cfg, vocab)

    return "decoder", _Weighted(logits, rng), [f_x] + _trainable(store)


def _siou_case(rng: np.random.Generator) -> Tuple[str, Objective, List[Tensor]]:
    vocab = CoordVocab(20)
    logits = _leaf(rng, 4, vocab.output_size)
    gt = BBox(0.2, 0.3, 0.3, 0.25, BoxFrame.normalized)
    return "soft_box_siou", lambda: siou_term(soft_box(logits, vocab), gt), [logits]


def _pipeline_case(cfg: ModelConfig, rng: np.random.Generator, seed: int) -> Tuple[str, Objective, List[Tensor]]:
    model = TrackingModel(cfg, seed=seed)
    _randomize_fusion(model.store, rng)
    fixed = rng.uniform(0.0, 255.0, size=(cfg.template_size, cfg.template_size))
    dynamic = rng.uniform(0.0, 255.0, size=(cfg.template_size, cfg.template_size))
    search = rng.uniform(0.0, 255.0, size=(cfg.search_size, cfg.search_size))
    gt = BBox(0.3, 0.35, 0.25, 0.2, BoxFrame.normalized)
    return (
        f"pipeline_{cfg.fusion.value}",
        lambda: model.loss(fixed, dynamic, search, gt).tensor,
        _trainable(model.store),
    )


def run_suite(
    cfg: Optional[ModelConfig] = None,
    tol: float = 1e-4,
    seed: int = 0,
    eps: float = 1e-6,
) -> List[GradCheckReport]:
    """Every differentiable op, the fusion variants, the decoder, the loss and the whole model."""
    if not MIN_EPS <= eps <= MAX_EPS:
        raise ContractViolation(f"eps {eps!r} outside [{MIN_EPS}, {MAX_EPS}]")
    cfg = cfg if cfg is not None else toy_config()
    rng = np.random.default_rng(seed)
    cases = _kernel_cases(rng)
    cases += [_fusion_case(mode, rng) for mode in (FusionMode.mpfm, FusionMode.conf, FusionMode.addf)]
    cases += [_decoder_case(rng), _siou_case(rng)]
    reports = [grad_check(f, params, eps=eps, tol=tol, probes=None, seed=seed, name=name) for name, f, params in cases]
    name, f, params = _pipeline_case(cfg, rng, seed)
    reports.append(grad_check(f, params, eps=eps, tol=tol, probes=2, seed=seed, name=name))
    failed: Dict[str, float] = {r.name: r.max_rel_error for r in reports if not r.passed}
    if failed:
        logger.warning("gradient check failed for %s", failed)
    return reports


