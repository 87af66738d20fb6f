"""Three-branch multi-level encoder over backbone levels 3, 4 and 5."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attention import (
    AttentionParams,
    ShrinkageParams,
    TokenSequence,
    init_attention_params,
    init_shrinkage_params,
    st_attention_tokens,
)
from .errors import ConfigError, DimensionError
from .tensor import LinearParams, Tensor, add, avg_pool_2d, linear, relu, reshape, take_rows

LEVELS = (3, 4, 5)


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 256
    heads: int = 8
    reduction: int = 4
    ffn_ratio: int = 4
    depth: int = 1
    ppe_kernel: int = 3

    def __post_init__(self):
        if self.embed_dim < 1 or self.heads < 1 or self.embed_dim % self.heads:
            raise ConfigError(f"{self.heads} heads do not divide embed_dim {self.embed_dim}")
        d = self.embed_dim // self.heads
        if self.reduction < 1 or d % self.reduction:
            raise ConfigError(f"reduction {self.reduction} does not divide head dim {d}")
        if self.ffn_ratio < 1 or self.depth < 1:
            raise ConfigError("ffn_ratio and depth must be positive")
        if self.ppe_kernel < 1 or self.ppe_kernel % 2 == 0:
            raise ConfigError("ppe_kernel must be a positive odd integer to preserve the grid")


@dataclass(frozen=True)
class FeatureMap:
    level: int
    tensor: Tensor  # [H, W, C]

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ConfigError(f"level must be one of {LEVELS}, got {self.level}")
        if self.tensor.ndim != 3:
            raise DimensionError(f"feature map must be [H, W, C], got {self.tensor.shape}")

    @property
    def grid(self) -> tuple[int, int]:
        return self.tensor.shape[0], self.tensor.shape[1]


@dataclass(frozen=True)
class BranchLayer:
    attention: AttentionParams
    shrink: tuple[ShrinkageParams, ...]
    ffn1: LinearParams  # [C_e, ratio * C_e]
    ffn2: LinearParams  # [ratio * C_e, C_e]

    def __post_init__(self):
        c = self.attention.dim
        if len(self.shrink) != self.attention.heads:
            raise ConfigError(f"{len(self.shrink)} shrinkage sets for {self.attention.heads} heads")
        if self.ffn1.in_dim != c or self.ffn2.out_dim != c or self.ffn1.out_dim != self.ffn2.in_dim:
            raise ConfigError("feed-forward layers do not map C_e -> hidden -> C_e")


@dataclass(frozen=True)
class BranchParams:
    embed: LinearParams  # [C_l, C_e]
    layers: tuple[BranchLayer, ...]


@dataclass(frozen=True)
class EncoderParams:
    branches: tuple[BranchParams, BranchParams, BranchParams]
    laterals: tuple[LinearParams, LinearParams, LinearParams]
    config: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        widths = {b.embed.out_dim for b in self.branches}
        widths |= {layer.attention.dim for b in self.branches for layer in b.layers}
        widths |= {lat.in_dim for lat in self.laterals} | {lat.out_dim for lat in self.laterals}
        if len(widths) != 1:
            raise ConfigError(f"branches disagree on the embedding width: {sorted(widths)}")

    @property
    def embed_dim(self) -> int:
        return self.branches[0].embed.out_dim


def _uniform_linear(rng: np.random.Generator, n_in: int, n_out: int) -> LinearParams:
    bound = 1.0 / math.sqrt(n_in)
    return LinearParams(Tensor(rng.uniform(-bound, bound, (n_in, n_out))), Tensor(np.zeros(n_out)))


def init_encoder_params(seed: int, channels: Sequence[int], config: EncoderConfig | None = None) -> EncoderParams:
    config = config or EncoderConfig()
    if len(channels) != 3 or min(channels) < 1:
        raise ConfigError(f"need three positive channel counts, got {channels}")
    rng = np.random.default_rng(seed)
    c, d = config.embed_dim, config.embed_dim // config.heads
    branches = []
    for c_l in channels:
        layers = tuple(
            BranchLayer(
                attention=init_attention_params(rng, c, config.heads),
                shrink=tuple(init_shrinkage_params(rng, d, config.reduction) for _ in range(config.heads)),
                ffn1=_uniform_linear(rng, c, config.ffn_ratio * c),
                ffn2=_uniform_linear(rng, config.ffn_ratio * c, c),
            )
            for _ in range(config.depth)
        )
        branches.append(BranchParams(_uniform_linear(rng, c_l, c), layers))
    laterals = tuple(_uniform_linear(rng, c, c) for _ in LEVELS)
    return EncoderParams(tuple(branches), laterals, config)


def synth_features(
    seed: int, base: tuple[int, int] = (8, 8), channels: Sequence[int] = (128, 256, 512)
) -> tuple[FeatureMap, FeatureMap, FeatureMap]:
    """Uniform(-1, 1) stand-ins for the last three backbone stages.

    Spatial extents halve (rounding up) from one level to the next.
    """
    h, w = base
    if h < 1 or w < 1 or len(channels) != 3 or min(channels) < 1:
        raise ConfigError(f"invalid synthetic geometry base={base}, channels={channels}")
    rng = np.random.default_rng(seed)
    maps = []
    for level, c in zip(LEVELS, channels):
        maps.append(FeatureMap(level, Tensor(rng.uniform(-1.0, 1.0, (h, w, c)))))
        h, w = math.ceil(h / 2), math.ceil(w / 2)
    return tuple(maps)


def multi_level_patch_embed(f: FeatureMap, embed: LinearParams) -> TokenSequence:
    h, w, c = f.tensor.shape
    if embed.in_dim != c:
        raise ConfigError(f"level {f.level} has {c} channels, embedding expects {embed.in_dim}")
    return TokenSequence(linear(reshape(f.tensor, (h * w, c)), embed), (h, w))


def pooling_positional_encoding(m: TokenSequence, kernel: int = 3) -> TokenSequence:
    """Tokens plus their stride-1 local average on the grid (padding excluded from the mean)."""
    h, w = m.grid
    n, c = m.tokens.shape
    if n != h * w:
        raise DimensionError(f"{n} tokens do not fill grid {m.grid}")
    pooled = avg_pool_2d(reshape(m.tokens, (h, w, c)), kernel, 1, kernel // 2)
    return TokenSequence(add(reshape(pooled, (n, c)), m.tokens), m.grid)


def feed_forward(x: Tensor, ffn1: LinearParams, ffn2: LinearParams) -> Tensor:
    return add(x, linear(relu(linear(x, ffn1)), ffn2))


def encoder_branch(m: TokenSequence, layers: Sequence[BranchLayer], ppe_kernel: int = 3) -> TokenSequence:
    """PPE once at entry, then per layer: soft-threshold attention and a residual FFN."""
    x = pooling_positional_encoding(m, ppe_kernel).tokens
    for layer in layers:
        x = feed_forward(st_attention_tokens(x, layer.attention, layer.shrink), layer.ffn1, layer.ffn2)
    return TokenSequence(x, m.grid)


def upsample_nearest(m: TokenSequence, grid: tuple[int, int]) -> TokenSequence:
    """Nearest-neighbour upsampling to a grid whose extents halve (rounding up) to ``m.grid``."""
    (sh, sw), (th, tw) = m.grid, grid
    if sh != math.ceil(th / 2) or sw != math.ceil(tw / 2):
        raise DimensionError(f"grid {m.grid} is not the halved form of {grid}")
    rows = np.arange(th) // 2
    cols = np.arange(tw) // 2
    index = (rows[:, None] * sw + cols[None, :]).reshape(-1)
    return TokenSequence(take_rows(m.tokens, index), grid)


def multi_level_aggregate(
    b3: TokenSequence, b4: TokenSequence, b5: TokenSequence, laterals: Sequence[LinearParams]
) -> tuple[TokenSequence, TokenSequence, TokenSequence]:
    """Top-down fusion: each coarser output is upsampled and added before the finer lateral."""
    lat3, lat4, lat5 = laterals
    o5 = TokenSequence(linear(b5.tokens, lat5), b5.grid)
    fused4 = add(b4.tokens, upsample_nearest(o5, b4.grid).tokens)
    o4 = TokenSequence(linear(fused4, lat4), b4.grid)
    fused3 = add(b3.tokens, upsample_nearest(o4, b3.grid).tokens)
    o3 = TokenSequence(linear(fused3, lat3), b3.grid)
    return o3, o4, o5


def encoder_forward(
    features: Sequence[FeatureMap], p: EncoderParams, trace: dict | None = None
) -> tuple[TokenSequence, TokenSequence, TokenSequence]:
    if [f.level for f in features] != list(LEVELS):
        raise ConfigError(f"expected feature maps for levels {LEVELS}")
    branches = []
    for f, bp in zip(features, p.branches):
        m = multi_level_patch_embed(f, bp.embed)
        branches.append(encoder_branch(m, bp.layers, p.config.ppe_kernel))
    if trace is not None:
        trace["branches"] = tuple(branches)
    return multi_level_aggregate(*branches, p.laterals)
