"""Softmax attention, factorized attention and the soft-threshold block.

Shapes follow the token-major convention: a head's queries, keys and values
are ``[N, d]`` matrices, one row per token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import (
    LinearParams,
    Tensor,
    abs_,
    add,
    concat_cols,
    linear,
    matmul,
    mul,
    reduce_mean,
    relu,
    reshape,
    scale,
    sigmoid,
    slice_cols,
    soft_threshold,
    softmax_rows,
    take_rows,
    transpose,
)

MECHANISMS = ("dot_product", "factorized")


@dataclass(frozen=True)
class TokenSequence:
    tokens: Tensor  # [N, C]
    grid: tuple[int, int]

    def __post_init__(self):
        h, w = self.grid
        if self.tokens.ndim != 2 or self.tokens.shape[0] != h * w:
            raise DimensionError(f"tokens {self.tokens.shape} do not fill grid {self.grid}")

    @property
    def n(self) -> int:
        return self.tokens.shape[0]

    @property
    def channels(self) -> int:
        return self.tokens.shape[1]


@dataclass(frozen=True)
class AttentionParams:
    wq: LinearParams
    wk: LinearParams
    wv: LinearParams
    heads: int = 8

    def __post_init__(self):
        c = self.wq.in_dim
        for name in ("wq", "wk", "wv"):
            p = getattr(self, name)
            if p.in_dim != c or p.out_dim != c:
                raise ConfigError(f"{name} maps {p.in_dim}->{p.out_dim}, expected {c}->{c}")
        if self.heads < 1 or c % self.heads:
            raise ConfigError(f"{self.heads} heads do not divide {c} channels")

    @property
    def dim(self) -> int:
        return self.wq.in_dim

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass(frozen=True)
class ShrinkageParams:
    """Two-layer bottleneck mapping pooled |context| statistics to threshold logits."""

    fs1: LinearParams  # [d, d/r]
    fs2: LinearParams  # [d/r, d]
    reduction: int = 4

    def __post_init__(self):
        d = self.fs1.in_dim
        if self.fs1.out_dim != self.fs2.in_dim or self.fs2.out_dim != d:
            raise ConfigError(
                f"shrinkage layers {self.fs1.weight.shape} and {self.fs2.weight.shape} do not form d->d/r->d"
            )
        if self.reduction < 1 or d % self.reduction or d // self.reduction != self.fs1.out_dim:
            raise ConfigError(f"reduction {self.reduction} inconsistent with d={d}, hidden={self.fs1.out_dim}")

    @property
    def dim(self) -> int:
        return self.fs1.in_dim


@dataclass(frozen=True)
class ThresholdVector:
    alpha: Tensor  # [d], in (0, 1)
    tau: Tensor  # [d], >= 0


def init_attention_params(rng: np.random.Generator, dim: int, heads: int = 8) -> AttentionParams:
    bound = 1.0 / math.sqrt(dim)

    def proj():
        return LinearParams(Tensor(rng.uniform(-bound, bound, (dim, dim))), Tensor(np.zeros(dim)))

    return AttentionParams(proj(), proj(), proj(), heads)


def init_shrinkage_params(rng: np.random.Generator, head_dim: int, reduction: int = 4) -> ShrinkageParams:
    if reduction < 1 or head_dim % reduction:
        raise ConfigError(f"reduction {reduction} does not divide head dim {head_dim}")
    hidden = head_dim // reduction
    fs1 = LinearParams(Tensor(rng.uniform(-0.1, 0.1, (head_dim, hidden))), Tensor(np.zeros(hidden)))
    fs2 = LinearParams(Tensor(rng.uniform(-0.1, 0.1, (hidden, head_dim))), Tensor(np.zeros(head_dim)))
    return ShrinkageParams(fs1, fs2, reduction)


def zero_shrinkage_params(head_dim: int, reduction: int = 4) -> ShrinkageParams:
    hidden = head_dim // reduction
    return ShrinkageParams(LinearParams.zeros(head_dim, hidden), LinearParams.zeros(hidden, head_dim), reduction)


def split_heads(x: Tensor, heads: int) -> list[Tensor]:
    c = x.shape[1]
    if heads < 1 or c % heads:
        raise ConfigError(f"{heads} heads do not divide {c} channels")
    d = c // heads
    if heads == 1:
        return [x]
    return [slice_cols(x, i * d, (i + 1) * d) for i in range(heads)]


def merge_heads(parts: Sequence[Tensor]) -> Tensor:
    return parts[0] if len(parts) == 1 else concat_cols(parts)


def project_qkv(m: TokenSequence | Tensor, p: AttentionParams) -> tuple[list[Tensor], list[Tensor], list[Tensor]]:
    """Project tokens to queries, keys and values, split into contiguous channel blocks per head."""
    x = m.tokens if isinstance(m, TokenSequence) else m
    if x.shape[1] != p.dim:
        raise ConfigError(f"tokens carry {x.shape[1]} channels, projections expect {p.dim}")
    return tuple(split_heads(linear(x, w), p.heads) for w in (p.wq, p.wk, p.wv))


def _check_qkv(q: Tensor, k: Tensor, v: Tensor) -> int:
    if not (q.ndim == k.ndim == v.ndim == 2) or not (q.shape == k.shape == v.shape):
        raise DimensionError(f"q, k, v must share one [N, d] shape, got {q.shape}, {k.shape}, {v.shape}")
    return q.shape[1]


def softmax_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Quadratic baseline: softmax_rows(q k^T / sqrt(d)) v."""
    d = _check_qkv(q, k, v)
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d))
    return matmul(softmax_rows(scores), v)


def softmax_tokens(k: Tensor) -> Tensor:
    """Softmax of each channel over the token axis."""
    return transpose(softmax_rows(transpose(k)))


def canonical_token_order(k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """A row order that depends only on the multiset of (key, value) rows."""
    lead = k[:, 0]
    order = np.argsort(lead, kind="stable")
    lead = lead[order]
    if np.any(lead[1:] == lead[:-1]):
        order = np.lexsort(np.concatenate([k, v], axis=1).T[::-1])
    return order


def context_matrix(k: Tensor, v: Tensor) -> Tensor:
    """softmax_tokens(k)^T v, a [d, d] matrix independent of N.

    Token reductions run in a canonical row order, so the result is a
    function of the (key, value) multiset and permuting tokens leaves it
    bit-identical.
    """
    order = canonical_token_order(k.value, v.value)
    if np.any(order != np.arange(order.size)):
        k, v = take_rows(k, order), take_rows(v, order)
    # softmax_tokens(k)^T without the round trip through two transposes
    return matmul(softmax_rows(transpose(k)), v)


def factor_att(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """Right-associated factorized attention ``(q / sqrt(d)) (softmax_tokens(k)^T v)``.

    Returns ``(output, ctx)``; the [d, d] context is formed before touching
    the queries, so cost grows linearly in N.
    """
    d = _check_qkv(q, k, v)
    ctx = context_matrix(k, v)
    return matmul(scale(q, 1.0 / math.sqrt(d)), ctx), ctx


def compute_thresholds(ctx: Tensor, s: ShrinkageParams) -> ThresholdVector:
    if ctx.ndim != 2 or ctx.shape[0] != ctx.shape[1]:
        raise ConfigError(f"context must be square, got {ctx.shape}")
    if ctx.shape[1] != s.dim:
        raise ConfigError(f"context width {ctx.shape[1]} does not match shrinkage dim {s.dim}")
    d = s.dim
    pooled = reduce_mean(abs_(ctx), axis=0)
    z = linear(relu(linear(reshape(pooled, (1, d)), s.fs1)), s.fs2)
    alpha = reshape(sigmoid(z), (d,))
    return ThresholdVector(alpha=alpha, tau=mul(alpha, pooled))


def st_attention_tokens(
    x: Tensor, p: AttentionParams, shrink: Sequence[ShrinkageParams], trace: dict | None = None
) -> Tensor:
    """Soft-threshold attention on a raw ``[N, C]`` token matrix."""
    if len(shrink) != p.heads:
        raise ConfigError(f"{len(shrink)} shrinkage param sets for {p.heads} heads")
    qs, ks, vs = project_qkv(x, p)
    outs = []
    for i, (q, k, v, s) in enumerate(zip(qs, ks, vs, shrink)):
        fa, ctx = factor_att(q, k, v)
        th = compute_thresholds(ctx, s)
        outs.append(add(soft_threshold(fa, th.tau), v))
        if trace is not None:
            trace.setdefault("heads", []).append(
                {"q": q, "k": k, "v": v, "ctx": ctx, "factor_att": fa, "alpha": th.alpha, "tau": th.tau}
            )
    return merge_heads(outs)


def st_attention(
    m: TokenSequence, p: AttentionParams, shrink: Sequence[ShrinkageParams], trace: dict | None = None
) -> TokenSequence:
    return TokenSequence(st_attention_tokens(m.tokens, p, shrink, trace), m.grid)


def flop_count(mechanism: str, n: int, c: int, heads: int = 1) -> int:
    """Analytic forward flops for one attention evaluation over all heads.

    Multiply-add counts 2, each softmax element 5, each scaling 1.
    """
    if min(n, c, heads) < 1 or c % heads:
        raise ConfigError(f"invalid geometry N={n}, C={c}, heads={heads}")
    d = c // heads
    if mechanism == "dot_product":
        per_head = 4 * n * n * d + 5 * n * n + n * d
    elif mechanism == "factorized":
        per_head = 4 * n * d * d + 5 * n * d + n * d
    else:
        raise ConfigError(f"unknown mechanism {mechanism!r}; expected one of {MECHANISMS}")
    return heads * per_head
