"""Tracking Model
===================
Encoder, fusion and decoder wired together over one parameter store.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import logging
from pathlib import Path
from typing import Optional
from typing import Sequence
from typing import Union

import numpy as np

from coordtrack import decoder
from coordtrack import encoder
from coordtrack import fusion
from coordtrack import layers
from coordtrack import tensor as T
from coordtrack.config import ModelConfig
from coordtrack.config import dump_config
from coordtrack.config import load_config
from coordtrack.decoder import TokenStream
from coordtrack.objective import LossReport
from coordtrack.objective import total_loss
from coordtrack.params import ParamStore
from coordtrack.params import load_store
from coordtrack.tensor import Operand
from coordtrack.tensor import Tensor
from coordtrack.vocab import BBox
from coordtrack.vocab import CoordVocab

logger = logging.getLogger(__name__)

INTENSITY_MEAN = 127.5
INTENSITY_SCALE = 64.0


def init_params(store: ParamStore, cfg: ModelConfig, rng: np.random.Generator) -> None:
    encoder.init_params(store, cfg.encoder, rng)
    fusion.init_params(store, cfg.fusion, cfg.embed_dim, rng)
    decoder.init_params(store, cfg.decoder, cfg.embed_dim, cfg.vocab, rng)


def normalize_intensity(img: Operand) -> np.ndarray:
    """8-bit intensities to roughly zero-mean unit-range network input."""
    data = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)
    return (data - INTENSITY_MEAN) / INTENSITY_SCALE


class TrackingModel:
    """Maps (fixed template, dynamic template, search crop) to coordinate tokens."""

    def __init__(self, cfg: ModelConfig, store: Optional[ParamStore] = None, seed: int = 0) -> None:
        self.cfg = cfg
        fresh = ParamStore()
        init_params(fresh, cfg, np.random.default_rng(seed))
        if store is not None:
            fresh.load_state(store.state())
        self.store = fresh
        logger.debug("model with %d tensors, %d values", len(self.store), self.store.count())

    @property
    def vocab(self) -> CoordVocab:
        return self.cfg.vocab

    def search_features(self, fixed_tmpl: Operand, dyn_tmpl: Operand, search: Operand) -> Tensor:
        """Encoder output after fusion, N_x x C."""
        f_x = encoder.encode(
            normalize_intensity(fixed_tmpl),
            normalize_intensity(dyn_tmpl),
            normalize_intensity(search),
            self.store,
            self.cfg.encoder,
        )
        grid = self.cfg.encoder.search_grid
        fused = fusion.fuse(layers.tokens_to_grid(f_x, grid, grid), self.store, self.cfg.fusion)
        return layers.grid_to_tokens(fused)

    def memory(self, fixed_tmpl: Operand, dyn_tmpl: Operand, search: Operand) -> Tensor:
        return decoder.project_memory(self.search_features(fixed_tmpl, dyn_tmpl, search), self.store)

    def forward_logits(
        self,
        fixed_tmpl: Operand,
        dyn_tmpl: Operand,
        search: Operand,
        tokens: Sequence[int],
    ) -> Tensor:
        mem = self.memory(fixed_tmpl, dyn_tmpl, search)
        return decoder.teacher_forcing_logits(mem, tokens, self.store, self.cfg.decoder, self.vocab)

    def loss(self, fixed_tmpl: Operand, dyn_tmpl: Operand, search: Operand, gt_box: BBox) -> LossReport:
        """Teacher-forced loss for a box in normalized search-crop coordinates."""
        vocab = self.vocab
        logits = self.forward_logits(fixed_tmpl, dyn_tmpl, search, vocab.encode_box(gt_box))
        return total_loss(logits, vocab.target_tokens(gt_box), gt_box, vocab, use_siou=self.cfg.use_siou)

    def predict(self, fixed_tmpl: Operand, dyn_tmpl: Operand, search: Operand) -> TokenStream:
        with T.no_grad():
            mem = self.memory(fixed_tmpl, dyn_tmpl, search)
            return decoder.greedy_decode(mem, self.store, self.cfg.decoder, self.vocab)

    def save(self, weights: Union[str, Path]) -> None:
        """Write the weights file plus its ``<weights>.cfg`` sidecar."""
        self.store.save(weights)
        dump_config(self.cfg, f"{weights}.cfg")

    @classmethod
    def from_files(
        cls,
        weights: Union[str, Path],
        config: Optional[Union[str, Path]] = None,
    ) -> "TrackingModel":
        cfg_path = Path(config) if config is not None else Path(f"{weights}.cfg")
        cfg = load_config(cfg_path)
        model = cls(cfg)
        load_store(weights, model.store)
        logger.info("loaded %s with config %s", weights, cfg_path)
        return model
