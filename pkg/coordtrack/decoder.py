"""Causal Decoder
===================
Two pre-norm transformer layers over the coordinate-token stream
``[cmd, x, y, w, h]``: masked self-attention, cross-attention into the
(projected) search features, feed-forward. A three-layer perceptron maps
the hidden states to ``nbins + 1`` logits (coordinate bins plus ``end``).
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import logging
from dataclasses import dataclass
from dataclasses import field
from typing import Callable
from typing import List
from typing import Sequence

import numpy as np

from coordtrack import layers
from coordtrack import tensor as T
from coordtrack.errors import ContractViolation
from coordtrack.params import ParamStore
from coordtrack.tensor import Tensor
from coordtrack.vocab import CoordVocab

logger = logging.getLogger(__name__)

SEQUENCE_LENGTH = 5
COORDINATE_STEPS = 4

StepFn = Callable[[Sequence[int]], np.ndarray]


@dataclass(frozen=True)
class DecoderConfig:
    layers: int = 2
    hidden: int = 256
    heads: int = 8
    mlp_ratio: int = 4

    def __post_init__(self) -> None:
        if self.hidden % self.heads:
            raise ContractViolation(f"decoder hidden {self.hidden} not divisible by {self.heads} heads")
        if self.layers < 1:
            raise ContractViolation("decoder needs at least one layer")


@dataclass
class TokenStream:
    """Token prefix starting at ``cmd`` with the logits and score of every generated step."""

    tokens: List[int]
    logits: List[np.ndarray] = field(default_factory=list)
    scores: List[float] = field(default_factory=list)

    @property
    def generated(self) -> List[int]:
        return self.tokens[1:]

    def append(self, token: int, logits: np.ndarray, score: float) -> None:
        if not 0.0 < score <= 1.0:
            raise ContractViolation(f"step score {score} outside (0, 1]")
        self.tokens.append(token)
        self.logits.append(logits)
        self.scores.append(score)


def init_params(
    store: ParamStore,
    cfg: DecoderConfig,
    enc_dim: int,
    vocab: CoordVocab,
    rng: np.random.Generator,
) -> None:
    h = cfg.hidden
    layers.init_linear(store, "dec.bridge", enc_dim, h, rng)
    layers.init_norm(store, "dec.memory_norm", h)
    store.add("dec.embed.weight", rng.normal(0.0, 0.02, size=(vocab.embedding_size, h)))
    store.add("dec.pos.weight", rng.normal(0.0, 0.02, size=(SEQUENCE_LENGTH, h)))
    for i in range(cfg.layers):
        prefix = f"dec.layer{i}"
        layers.init_norm(store, f"{prefix}.norm1", h)
        layers.init_linear(store, f"{prefix}.self_qkv", h, 3 * h, rng)
        layers.init_linear(store, f"{prefix}.self_proj", h, h, rng)
        layers.init_norm(store, f"{prefix}.norm2", h)
        layers.init_linear(store, f"{prefix}.cross_q", h, h, rng)
        layers.init_linear(store, f"{prefix}.cross_kv", h, 2 * h, rng)
        layers.init_linear(store, f"{prefix}.cross_proj", h, h, rng)
        layers.init_norm(store, f"{prefix}.norm3", h)
        layers.init_linear(store, f"{prefix}.mlp1", h, cfg.mlp_ratio * h, rng)
        layers.init_linear(store, f"{prefix}.mlp2", cfg.mlp_ratio * h, h, rng)
    layers.init_norm(store, "dec.norm", h)
    layers.init_linear(store, "dec.head.1", h, h, rng)
    layers.init_linear(store, "dec.head.2", h, h, rng)
    layers.init_linear(store, "dec.head.3", h, vocab.output_size, rng)


def causal_mask(length: int) -> Tensor:
    """0 on and below the diagonal, -inf above."""
    if length < 1:
        raise ContractViolation(f"causal_mask() needs length >= 1, got {length}")
    mask = np.triu(np.full((length, length), -np.inf), k=1)
    return T.as_tensor(mask)


def project_memory(f_x: Tensor, store: ParamStore) -> Tensor:
    """Bridge encoder-width search features to the decoder width."""
    width = store["dec.bridge.weight"].shape[0]
    if f_x.ndim != 2 or f_x.shape[1] != width:
        raise ContractViolation(f"decoder memory must be N x {width}, got {f_x.shape}")
    return layers.norm(layers.linear(f_x, store, "dec.bridge"), store, "dec.memory_norm")


def embed_tokens(tokens: Sequence[int], store: ParamStore, vocab: CoordVocab) -> Tensor:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or not 1 <= len(ids) <= SEQUENCE_LENGTH:
        raise ContractViolation(f"decoder input must hold 1..{SEQUENCE_LENGTH} tokens, got {list(tokens)}")
    if ids.min() < 1 or ids.max() > vocab.embedding_size:
        raise ContractViolation(f"token ids {list(tokens)} outside [1, {vocab.embedding_size}]")
    table = store["dec.embed.weight"]
    return table[ids - 1] + store["dec.pos.weight"][: len(ids)]


def decoder_layer(
    x: Tensor,
    memory: Tensor,
    store: ParamStore,
    index: int,
    heads: int,
    mask: Tensor,
) -> Tensor:
    """Masked self-attention, cross-attention into ``memory``, feed-forward."""
    prefix = f"dec.layer{index}"
    width = x.shape[1]
    if memory.ndim != 2 or memory.shape[1] != width:
        raise ContractViolation(f"decoder memory {memory.shape} does not match token width {width}")

    qkv = layers.linear(layers.norm(x, store, f"{prefix}.norm1"), store, f"{prefix}.self_qkv")
    q, k, v = (layers.split_heads(qkv[:, i * width:(i + 1) * width], heads) for i in range(3))
    a = x + layers.linear(layers.merge_heads(layers.attention(q, k, v, mask)), store, f"{prefix}.self_proj")

    q = layers.split_heads(layers.linear(layers.norm(a, store, f"{prefix}.norm2"), store, f"{prefix}.cross_q"), heads)
    kv = layers.linear(memory, store, f"{prefix}.cross_kv")
    k = layers.split_heads(kv[:, :width], heads)
    v = layers.split_heads(kv[:, width:], heads)
    b = a + layers.linear(layers.merge_heads(layers.attention(q, k, v)), store, f"{prefix}.cross_proj")

    return b + layers.mlp(layers.norm(b, store, f"{prefix}.norm3"), store, f"{prefix}.mlp1", f"{prefix}.mlp2")


def _head(x: Tensor, store: ParamStore) -> Tensor:
    x = T.gelu(layers.linear(x, store, "dec.head.1"))
    x = T.gelu(layers.linear(x, store, "dec.head.2"))
    return layers.linear(x, store, "dec.head.3")


def forward(
    memory: Tensor,
    tokens: Sequence[int],
    store: ParamStore,
    cfg: DecoderConfig,
    vocab: CoordVocab,
) -> Tensor:
    """Logits for every input position, T x (nbins + 1)."""
    x = embed_tokens(tokens, store, vocab)
    mask = causal_mask(len(tokens))
    for i in range(cfg.layers):
        x = decoder_layer(x, memory, store, i, cfg.heads, mask)
    return _head(layers.norm(x, store, "dec.norm"), store)


def teacher_forcing_logits(
    memory: Tensor,
    tokens: Sequence[int],
    store: ParamStore,
    cfg: DecoderConfig,
    vocab: CoordVocab,
) -> Tensor:
    """All five target positions ``[x, y, w, h, end]`` in one pass."""
    if len(tokens) != SEQUENCE_LENGTH:
        raise ContractViolation(f"teacher forcing needs {SEQUENCE_LENGTH} input tokens, got {len(tokens)}")
    return forward(memory, tokens, store, cfg, vocab)


def decode_step(
    memory: Tensor,
    prefix: Sequence[int],
    store: ParamStore,
    cfg: DecoderConfig,
    vocab: CoordVocab,
) -> np.ndarray:
    """Logits of the next token given ``prefix``."""
    return forward(memory, prefix, store, cfg, vocab).data[-1].copy()


def greedy_search(step: StepFn, vocab: CoordVocab, steps: int = COORDINATE_STEPS) -> TokenStream:
    """Argmax over the coordinate rows only; ``end`` is never emitted.

    ``np.argmax`` breaks ties toward the lowest token id.
    """
    stream = TokenStream([vocab.cmd_token])
    for _ in range(steps):
        logits = np.asarray(step(list(stream.tokens)), dtype=np.float64)
        if logits.shape != (vocab.output_size,):
            raise ContractViolation(f"step logits must have shape ({vocab.output_size},), got {logits.shape}")
        bins = logits[: vocab.nbins]
        row = int(np.argmax(bins))
        shifted = np.exp(bins - bins[row])
        stream.append(row + 1, logits, float(1.0 / np.sum(shifted)))
    return stream


def greedy_decode(
    memory: Tensor,
    store: ParamStore,
    cfg: DecoderConfig,
    vocab: CoordVocab,
) -> TokenStream:
    """Generate ``[x, y, w, h]`` from ``[cmd]``."""
    with T.no_grad():
        stream = greedy_search(lambda prefix: decode_step(memory, prefix, store, cfg, vocab), vocab)
    logger.debug("decoded tokens %s with scores %s", stream.generated, stream.scores)
    return stream
