"""Configuration
===================
Every architectural, training and tracking-policy setting in one validated
model. Config files are flat ``key = value`` text; ``#`` starts a comment.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import logging
from enum import Enum
from pathlib import Path
from typing import Any
from typing import Dict
from typing import Union

from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field
from pydantic import ValidationError
from pydantic import model_validator

from coordtrack.allowed_parameters import FusionMode
from coordtrack.allowed_parameters import LrSchedule
from coordtrack.decoder import DecoderConfig
from coordtrack.encoder import EncoderConfig
from coordtrack.errors import ContractViolation
from coordtrack.errors import SequenceFormatError
from coordtrack.vocab import CoordVocab

logger = logging.getLogger(__name__)


class ModelConfig(BaseModel):
    """Defaults are the full-scale settings; see ``toy_config`` for the desk-scale preset."""

    model_config = ConfigDict(frozen=True, extra="forbid", use_enum_values=False)

    # geometry
    template_size: int = Field(128, gt=0)
    search_size: int = Field(288, gt=0)
    patch: int = Field(16, gt=0)
    template_factor: float = Field(2.0, gt=0)
    search_factor: float = Field(4.5, gt=0)

    # encoder
    enc_layers: int = Field(12, ge=1)
    embed_dim: int = Field(768, gt=0)
    enc_heads: int = Field(12, gt=0)
    mlp_ratio: int = Field(4, gt=0)

    fusion: FusionMode = FusionMode.mpfm

    # decoder
    dec_layers: int = Field(2, ge=1)
    dec_hidden: int = Field(256, gt=0)
    dec_heads: int = Field(8, gt=0)
    nbins: int = Field(4000, gt=0)

    # objective and template updates
    use_siou: bool = True
    update_threshold: float = Field(0.6, ge=0, le=1)
    update_interval: int = Field(25, ge=1)
    update_templates: bool = True

    # optimisation
    lr_encoder: float = Field(1e-5, ge=0)
    lr_other: float = Field(1e-4, ge=0)
    weight_decay: float = Field(1e-4, ge=0)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    epochs: int = Field(120, ge=0)
    samples_per_epoch: int = Field(30000, ge=1)
    batch_size: int = Field(16, ge=1)
    grad_clip: float = Field(0.0, ge=0)
    lr_schedule: LrSchedule = LrSchedule.constant
    warmup_fraction: float = Field(0.0, ge=0, lt=1)

    # training-sample construction
    center_jitter: float = Field(0.25, ge=0)
    scale_jitter: float = Field(0.15, ge=0)
    max_frame_gap: int = Field(10, ge=0)

    # synthetic data
    train_sequences: int = Field(200, ge=1)
    heldout_sequences: int = Field(20, ge=1)
    sequence_length: int = Field(30, ge=1)
    frame_size: int = Field(128, ge=16)
    seed: int = 0

    @model_validator(mode="after")
    def _check_divisibility(self) -> "ModelConfig":
        if self.embed_dim % self.enc_heads:
            raise ContractViolation(f"embed_dim {self.embed_dim} not divisible by enc_heads {self.enc_heads}")
        if self.dec_hidden % self.dec_heads:
            raise ContractViolation(f"dec_hidden {self.dec_hidden} not divisible by dec_heads {self.dec_heads}")
        for name, size in (("template_size", self.template_size), ("search_size", self.search_size)):
            if size % self.patch:
                raise ContractViolation(f"{name} {size} not divisible by patch {self.patch}")
        if self.fusion is not FusionMode.none and (self.search_size // self.patch) % 2:
            raise ContractViolation(
                f"fusion {self.fusion.value} needs an even search grid, got {self.search_size // self.patch}"
            )
        return self

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(
            layers=self.enc_layers,
            patch=self.patch,
            embed_dim=self.embed_dim,
            heads=self.enc_heads,
            mlp_ratio=self.mlp_ratio,
            template_size=self.template_size,
            search_size=self.search_size,
        )

    @property
    def decoder(self) -> DecoderConfig:
        return DecoderConfig(
            layers=self.dec_layers,
            hidden=self.dec_hidden,
            heads=self.dec_heads,
            mlp_ratio=self.mlp_ratio,
        )

    @property
    def vocab(self) -> CoordVocab:
        return CoordVocab(self.nbins)

    def replace(self, **changes: Any) -> "ModelConfig":
        """Validated copy with ``changes`` applied."""
        return build_config({**self.model_dump(), **changes})


TOY_SETTINGS: Dict[str, Any] = {
    "template_size": 32,
    "search_size": 64,
    "patch": 8,
    "enc_layers": 2,
    "embed_dim": 64,
    "enc_heads": 4,
    "dec_hidden": 64,
    "dec_heads": 4,
    "nbins": 100,
    "lr_encoder": 5e-4,
    "lr_other": 1e-3,
    "weight_decay": 1e-4,
    "epochs": 40,
    "samples_per_epoch": 1000,
    "batch_size": 8,
    "grad_clip": 1.0,
    "lr_schedule": LrSchedule.cosine,
    "warmup_fraction": 0.05,
    "sequence_length": 30,
    "frame_size": 128,
}


def build_config(values: Dict[str, Any]) -> ModelConfig:
    try:
        return ModelConfig(**values)
    except ValidationError as exc:
        raise ContractViolation(f"invalid configuration: {exc.errors()[0]['msg']}") from None


def full_config() -> ModelConfig:
    return ModelConfig()


def toy_config() -> ModelConfig:
    return ModelConfig(**TOY_SETTINGS)


def parse_config(text: str, source: str = "<string>") -> ModelConfig:
    known = set(ModelConfig.model_fields)
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise SequenceFormatError(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
        if key not in known:
            raise SequenceFormatError(f"{source}:{number}: unknown config key {key!r}")
        if key in values:
            raise SequenceFormatError(f"{source}:{number}: duplicate config key {key!r}")
        values[key] = value
    try:
        return ModelConfig(**values)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "config"
        raise SequenceFormatError(f"{source}: {where}: {first['msg']}") from None


def load_config(path: Union[str, Path]) -> ModelConfig:
    text = Path(path).read_text(encoding="utf-8")
    cfg = parse_config(text, source=str(path))
    logger.info("loaded config %s (fusion=%s, nbins=%d)", path, cfg.fusion.value, cfg.nbins)
    return cfg


def _format_value(value: Any) -> str:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def format_config(cfg: ModelConfig) -> str:
    lines = [f"{name} = {_format_value(getattr(cfg, name))}" for name in ModelConfig.model_fields]
    return "\n".join(lines) + "\n"


def dump_config(cfg: ModelConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(format_config(cfg), encoding="utf-8")
