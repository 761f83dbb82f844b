"""Layers
===================
Parameterised building blocks shared by the encoder, the fusion module
and the decoder. Each block reads its weights from a ParamStore under a
name prefix; the matching ``init_*`` helper creates them.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import math
from typing import Optional

import numpy as np

from coordtrack import tensor as T
from coordtrack.params import ParamStore
from coordtrack.tensor import Tensor


def init_linear(store: ParamStore, name: str, fan_in: int, fan_out: int, rng: np.random.Generator, std: float = 0.02) -> None:
    store.add(f"{name}.weight", rng.normal(0.0, std, size=(fan_in, fan_out)))
    store.add(f"{name}.bias", np.zeros(fan_out))


def init_norm(store: ParamStore, name: str, width: int) -> None:
    store.add(f"{name}.weight", np.ones(width))
    store.add(f"{name}.bias", np.zeros(width))


def init_conv(
    store: ParamStore,
    name: str,
    c_in: int,
    c_out: int,
    k: int,
    rng: np.random.Generator,
    std: Optional[float] = None,
) -> None:
    """Normal kernel with std 1/sqrt(fan_in) unless ``std`` is given; ``std=0`` gives zeros."""
    std = 1.0 / math.sqrt(c_in * k * k) if std is None else std
    store.add(f"{name}.weight", rng.normal(0.0, std, size=(c_out, c_in, k, k)))
    store.add(f"{name}.bias", np.zeros(c_out))


def init_conv_transpose(store: ParamStore, name: str, c_in: int, c_out: int, k: int, rng: np.random.Generator) -> None:
    std = 1.0 / math.sqrt(c_in)
    store.add(f"{name}.weight", rng.normal(0.0, std, size=(c_in, c_out, k, k)))
    store.add(f"{name}.bias", np.zeros(c_out))


def linear(x: Tensor, store: ParamStore, name: str) -> Tensor:
    return T.matmul(x, store[f"{name}.weight"]) + store[f"{name}.bias"]


def norm(x: Tensor, store: ParamStore, name: str) -> Tensor:
    return T.layer_norm(x, store[f"{name}.weight"], store[f"{name}.bias"])


def conv(x: Tensor, store: ParamStore, name: str, pad: int = 0, stride: int = 1) -> Tensor:
    return T.conv2d(x, store[f"{name}.weight"], store[f"{name}.bias"], stride=stride, pad=pad)


def mlp(x: Tensor, store: ParamStore, first: str, second: str) -> Tensor:
    return linear(T.gelu(linear(x, store, first)), store, second)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """T x C -> heads x T x C/heads."""
    length, width = x.shape
    return T.transpose(T.reshape(x, (length, heads, width // heads)), (1, 0, 2))


def merge_heads(x: Tensor) -> Tensor:
    """heads x T x d -> T x heads*d."""
    heads, length, dim = x.shape
    return T.reshape(T.transpose(x, (1, 0, 2)), (length, heads * dim))


def attention(q: Tensor, k: Tensor, v: Tensor, mask: Optional[Tensor] = None) -> Tensor:
    """Scaled dot-product attention over heads x T x d operands."""
    scores = T.matmul(q, T.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = scores + mask
    return T.matmul(T.softmax(scores, axis=-1), v)


def tokens_to_grid(tokens: Tensor, rows: int, cols: int) -> Tensor:
    """N x C token sequence -> C x rows x cols map (row-major)."""
    return T.reshape(T.transpose(tokens), (tokens.shape[1], rows, cols))


def grid_to_tokens(grid: Tensor) -> Tensor:
    channels, rows, cols = grid.shape
    return T.transpose(T.reshape(grid, (channels, rows * cols)))
