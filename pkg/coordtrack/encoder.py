"""Joint Encoder
===================
Patch embedding plus a stack of joint-attention layers that extract and
fuse template and search features in one pass.

Template tokens (fixed and dynamic template, concatenated) attend only to
each other; search tokens attend to the concatenation of template and
search keys. The two streams are projected, normalised and passed through
the MLP separately, so nothing in the search stream can reach the
template stream.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import functools
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from coordtrack import layers
from coordtrack import tensor as T
from coordtrack.allowed_parameters import StreamOrigin
from coordtrack.errors import ContractViolation
from coordtrack.params import ParamStore
from coordtrack.tensor import Operand
from coordtrack.tensor import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 12
    patch: int = 16
    embed_dim: int = 768
    heads: int = 12
    mlp_ratio: int = 4
    template_size: int = 128
    search_size: int = 288

    def __post_init__(self) -> None:
        if self.embed_dim % self.heads:
            raise ContractViolation(f"embed_dim {self.embed_dim} not divisible by {self.heads} heads")
        for size in (self.template_size, self.search_size):
            if size % self.patch:
                raise ContractViolation(f"image size {size} not divisible by patch {self.patch}")

    @property
    def template_grid(self) -> int:
        return self.template_size // self.patch

    @property
    def search_grid(self) -> int:
        return self.search_size // self.patch

    @property
    def template_tokens(self) -> int:
        return self.template_grid ** 2

    @property
    def search_tokens(self) -> int:
        return self.search_grid ** 2


@dataclass(frozen=True)
class PatchSequence:
    tokens: Tensor
    origin: StreamOrigin
    grid: Tuple[int, int]

    def __post_init__(self) -> None:
        if self.tokens.shape[0] != self.grid[0] * self.grid[1]:
            raise ContractViolation(
                f"{self.tokens.shape[0]} tokens do not fill a {self.grid[0]}x{self.grid[1]} grid"
            )


def init_params(store: ParamStore, cfg: EncoderConfig, rng: np.random.Generator) -> None:
    c = cfg.embed_dim
    layers.init_conv(store, "enc.patch_embed", 1, c, cfg.patch, rng)
    store.add("enc.pos_z", sinusoidal_table(cfg.template_tokens, c), trainable=False)
    store.add("enc.pos_x", sinusoidal_table(cfg.search_tokens, c), trainable=False)
    for i in range(cfg.layers):
        prefix = f"enc.layer{i}"
        layers.init_norm(store, f"{prefix}.norm1", c)
        layers.init_linear(store, f"{prefix}.qkv", c, 3 * c, rng)
        layers.init_linear(store, f"{prefix}.proj", c, c, rng)
        layers.init_norm(store, f"{prefix}.norm2", c)
        layers.init_linear(store, f"{prefix}.mlp1", c, cfg.mlp_ratio * c, rng)
        layers.init_linear(store, f"{prefix}.mlp2", cfg.mlp_ratio * c, c, rng)


@functools.lru_cache(maxsize=16)
def _sinusoid(length: int, width: int) -> np.ndarray:
    position = np.arange(length, dtype=np.float64)[:, None]
    rates = np.exp(-np.log(10000.0) * np.arange(0, width, 2, dtype=np.float64) / width)
    table = np.zeros((length, width))
    table[:, 0::2] = np.sin(position * rates)
    table[:, 1::2] = np.cos(position * rates[: width // 2])
    table.flags.writeable = False
    return table


def sinusoidal_table(length: int, width: int) -> np.ndarray:
    """Fixed 1-D sinusoidal encoding: even channels sin, odd channels cos."""
    return _sinusoid(length, width).copy()


def patch_embed(img: Operand, store: ParamStore, cfg: EncoderConfig, origin: StreamOrigin) -> PatchSequence:
    """Embed a 1 x H x W single-channel image into an N x C token sequence."""
    img = T.as_tensor(img)
    if img.ndim == 2:
        img = T.reshape(img, (1,) + img.shape)
    if img.ndim != 3 or img.shape[0] != 1:
        raise ContractViolation(f"patch_embed() expects a single-channel image, got shape {img.shape}")
    _, h, w = img.shape
    if h % cfg.patch or w % cfg.patch:
        raise ContractViolation(f"image {h}x{w} not divisible into {cfg.patch}x{cfg.patch} patches")
    grid = layers.conv(img, store, "enc.patch_embed", stride=cfg.patch)
    return PatchSequence(layers.grid_to_tokens(grid), origin, (h // cfg.patch, w // cfg.patch))


def add_positional(seq: PatchSequence, store: ParamStore) -> PatchSequence:
    """Add the fixed sinusoidal table over the flattened patch index."""
    name = "enc.pos_x" if seq.origin is StreamOrigin.search else "enc.pos_z"
    table = store[name]
    count = seq.tokens.shape[0]
    if table.shape[0] < count:
        raise ContractViolation(f"{name} covers {table.shape[0]} positions, sequence has {count}")
    return PatchSequence(seq.tokens + table[:count], seq.origin, seq.grid)


def joint_attention(
    zp: Tensor,
    xp: Tensor,
    store: ParamStore,
    prefix: str,
    heads: int,
) -> Tuple[Tensor, Tensor]:
    """Template self-attention and search-to-(template, search) attention."""
    width = store[f"{prefix}.proj.weight"].shape[0]
    if zp.shape[1] != width or xp.shape[1] != width:
        raise ContractViolation(
            f"joint_attention() widths {zp.shape[1]}/{xp.shape[1]} do not match embed_dim {width}"
        )
    qkv_z = layers.linear(zp, store, f"{prefix}.qkv")
    qkv_x = layers.linear(xp, store, f"{prefix}.qkv")
    qz, kz, vz = (layers.split_heads(qkv_z[:, i * width:(i + 1) * width], heads) for i in range(3))
    qx, kx, vx = (layers.split_heads(qkv_x[:, i * width:(i + 1) * width], heads) for i in range(3))
    attn_z = layers.attention(qz, kz, vz)
    attn_x = layers.attention(qx, T.concat([kz, kx], axis=1), T.concat([vz, vx], axis=1))
    out_z = layers.linear(layers.merge_heads(attn_z), store, f"{prefix}.proj")
    out_x = layers.linear(layers.merge_heads(attn_x), store, f"{prefix}.proj")
    return out_z, out_x


def _layer_streams(zp: Tensor, xp: Tensor, store: ParamStore, prefix: str, heads: int) -> Tuple[Tensor, Tensor]:
    az, ax = joint_attention(
        layers.norm(zp, store, f"{prefix}.norm1"),
        layers.norm(xp, store, f"{prefix}.norm1"),
        store,
        prefix,
        heads,
    )
    az, ax = az + zp, ax + xp
    ez = layers.mlp(layers.norm(az, store, f"{prefix}.norm2"), store, f"{prefix}.mlp1", f"{prefix}.mlp2") + az
    ex = layers.mlp(layers.norm(ax, store, f"{prefix}.norm2"), store, f"{prefix}.mlp1", f"{prefix}.mlp2") + ax
    return ez, ex


def encoder_layer(e_prev: Tensor, template_count: int, store: ParamStore, index: int, heads: int) -> Tensor:
    """One pre-norm layer over the concatenated (templates, search) sequence.

    A = Attn(Norm(E)) + E;  E' = MLP(Norm(A)) + A
    """
    if not 0 < template_count < e_prev.shape[0]:
        raise ContractViolation(
            f"template_count {template_count} must split a sequence of {e_prev.shape[0]} tokens"
        )
    ez, ex = _layer_streams(
        e_prev[:template_count], e_prev[template_count:], store, f"enc.layer{index}", heads
    )
    return T.concat([ez, ex], axis=0)


def run_encoder(
    fixed_tmpl: Operand,
    dyn_tmpl: Operand,
    search: Operand,
    store: ParamStore,
    cfg: EncoderConfig,
) -> Tuple[Tensor, Tensor]:
    """Full stack; returns (template tokens, search tokens) of the last layer."""
    for name, img, size in (
        ("fixed template", fixed_tmpl, cfg.template_size),
        ("dynamic template", dyn_tmpl, cfg.template_size),
        ("search", search, cfg.search_size),
    ):
        shape = T.as_tensor(img).shape[-2:]
        if shape != (size, size):
            raise ContractViolation(f"{name} image is {shape}, expected {size}x{size}")
    z_fixed = add_positional(patch_embed(fixed_tmpl, store, cfg, StreamOrigin.template_fixed), store)
    z_dyn = add_positional(patch_embed(dyn_tmpl, store, cfg, StreamOrigin.template_dynamic), store)
    x = add_positional(patch_embed(search, store, cfg, StreamOrigin.search), store)
    zp = T.concat([z_fixed.tokens, z_dyn.tokens], axis=0)
    xp = x.tokens
    for i in range(cfg.layers):
        zp, xp = _layer_streams(zp, xp, store, f"enc.layer{i}", cfg.heads)
    return zp, xp


def encode(
    fixed_tmpl: Operand,
    dyn_tmpl: Operand,
    search: Operand,
    store: ParamStore,
    cfg: EncoderConfig,
) -> Tensor:
    """Search-region features f_x, N_x x C."""
    return run_encoder(fixed_tmpl, dyn_tmpl, search, store, cfg)[1]
