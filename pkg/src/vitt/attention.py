"""Attention building blocks composed from the tensor primitives."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import DimensionError, MaskError, ParameterSet, Tensor

MASK_VALUE = -1e9
MAX_POSITIONS = 512


class ConfigError(ValueError):
    """Invalid model/attention configuration."""


class CapacityError(ValueError):
    """Sequence is longer than the precomputed positional table."""


@dataclass(frozen=True)
class AttentionConfig:
    d: int
    h: int

    def __post_init__(self):
        if self.d <= 0 or self.h <= 0 or self.d % self.h:
            raise ConfigError(f"embedding dim {self.d} is not divisible by head count {self.h}")

    @property
    def d_k(self) -> int:
        return self.d // self.h


def causal_mask(n: int) -> np.ndarray:
    """Lower-triangular boolean mask, True where attention is allowed."""
    return np.tril(np.ones((n, n), dtype=bool))


def mask_bias(mask: np.ndarray | None) -> Tensor | None:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise MaskError("mask has a row with no attendable position")
    return Tensor(np.where(mask, 0.0, MASK_VALUE))


def positional_encoding(n_max: int, d: int) -> np.ndarray:
    """Sinusoidal table: sin on even columns, cos on odd, shared frequency per pair."""
    pos = np.arange(n_max, dtype=np.float64)[:, None]
    i2 = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i2 / d)
    P = np.zeros((n_max, d))
    P[:, 0::2] = np.sin(angle)
    P[:, 1::2] = np.cos(angle[:, : d // 2])
    return P


class PositionalEncoding:
    def __init__(self, d: int, n_max: int = MAX_POSITIONS):
        self.d = d
        self.n_max = n_max
        self.P = positional_encoding(n_max, d)

    def __call__(self, n: int) -> Tensor:
        if n > self.n_max:
            raise CapacityError(f"sequence length {n} exceeds positional capacity {self.n_max}")
        return Tensor(self.P[:n])


def scaled_dot_attention(Q: Tensor, K: Tensor, V: Tensor, mask=None) -> Tensor:
    """softmax(Q K^T / sqrt(d_k) + mask) V over the last two axes."""
    if Q.shape != K.shape or Q.shape[:-1] != V.shape[:-1]:
        raise DimensionError(f"attention: Q {Q.shape}, K {K.shape}, V {V.shape}")
    n, d_k = Q.shape[-2], Q.shape[-1]
    scores = T.matmul(Q * (1.0 / math.sqrt(d_k)), T.swap_last(K))
    bias = mask if isinstance(mask, Tensor) else mask_bias(mask)
    if bias is not None:
        if bias.shape != (n, n):
            raise DimensionError(f"mask shape {bias.shape} does not match sequence length {n}")
        scores = scores + bias
    return T.matmul(T.softmax_rows(scores), V)


def attention_weights(Q: Tensor, K: Tensor, mask=None) -> np.ndarray:
    """The softmax weight matrix alone (diagnostics / invariants)."""
    d_k = Q.shape[-1]
    scores = Q.data @ np.swapaxes(K.data, -1, -2) / math.sqrt(d_k)
    if mask is not None:
        scores = scores + np.where(np.asarray(mask, dtype=bool), 0.0, MASK_VALUE)
    with T.no_grad():
        return T.softmax_rows(Tensor(scores)).data


def init_attention(params: ParameterSet, prefix: str, cfg: AttentionConfig, rng: np.random.Generator) -> None:
    # per-head projections W_i^Q etc. are stored side by side as d x (h*d_k) blocks
    for name in ("wq", "wk", "wv", "wo"):
        params.add(f"{prefix}.{name}", T.init_uniform(rng, (cfg.d, cfg.d), cfg.d))


def multi_head_attention(Z: Tensor, params: ParameterSet, prefix: str, cfg: AttentionConfig, mask=None) -> Tensor:
    """concat(head_1..head_h) W^O with bias-free per-head Q/K/V projections."""
    if Z.shape[-1] != cfg.d:
        raise DimensionError(f"attention input width {Z.shape[-1]} != d={cfg.d}")
    lead, n = Z.shape[:-2], Z.shape[-2]
    h, dk = cfg.h, cfg.d_k

    def heads(w: Tensor) -> Tensor:
        x = T.matmul(Z, w).reshape(*lead, n, h, dk)
        axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
        return T.transpose(x, axes)

    Q = heads(params[f"{prefix}.wq"])
    K = heads(params[f"{prefix}.wk"])
    V = heads(params[f"{prefix}.wv"])
    out = scaled_dot_attention(Q, K, V, mask)
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    merged = T.transpose(out, axes).reshape(*lead, n, cfg.d)
    return T.matmul(merged, params[f"{prefix}.wo"])


def sublayer(x: Tensor, f: Callable[[Tensor], Tensor], gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Residual connection followed by layer normalisation (post-norm)."""
    fx = f(x)
    if fx.shape != x.shape:
        raise DimensionError(f"sublayer function changed shape {x.shape} -> {fx.shape}")
    return T.layer_norm(x + fx, gamma, beta, eps)


def feed_forward(x: Tensor, W1: Tensor, b1: Tensor, W2: Tensor, b2: Tensor) -> Tensor:
    """ReLU(x W1 + b1) W2 + b2."""
    if W1.shape[0] != x.shape[-1] or W2.shape[0] != W1.shape[1] or b1.shape != (W1.shape[1],) \
            or b2.shape != (W2.shape[1],):
        raise DimensionError(
            f"feed_forward: x {x.shape}, W1 {W1.shape}, b1 {b1.shape}, W2 {W2.shape}, b2 {b2.shape}"
        )
    return T.matmul(T.relu(T.matmul(x, W1) + b1), W2) + b2


def embed_with_position(X: Tensor, W_e: Tensor, D_e: Tensor, pe: PositionalEncoding) -> Tensor:
    """X W_e + D_e + P for a sequence along the second-to-last axis."""
    n = X.shape[-2]
    return T.matmul(X, W_e) + D_e + pe(n)


def init_block(params: ParameterSet, prefix: str, cfg: AttentionConfig, d_ff: int, rng: np.random.Generator) -> None:
    """One attention + feed-forward layer's weights."""
    d = cfg.d
    init_attention(params, f"{prefix}.attn", cfg, rng)
    params.add(f"{prefix}.norm1.gamma", np.ones(d))
    params.add(f"{prefix}.norm1.beta", np.zeros(d))
    params.add(f"{prefix}.ffn.w1", T.init_uniform(rng, (d, d_ff), d))
    params.add(f"{prefix}.ffn.b1", T.init_uniform(rng, (d_ff,), d))
    params.add(f"{prefix}.ffn.w2", T.init_uniform(rng, (d_ff, d), d_ff))
    params.add(f"{prefix}.ffn.b2", T.init_uniform(rng, (d,), d_ff))
    params.add(f"{prefix}.norm2.gamma", np.ones(d))
    params.add(f"{prefix}.norm2.beta", np.zeros(d))


def transformer_block(x: Tensor, params: ParameterSet, prefix: str, cfg: AttentionConfig, mask=None) -> Tensor:
    p = params
    x = sublayer(x, lambda z: multi_head_attention(z, p, f"{prefix}.attn", cfg, mask),
                 p[f"{prefix}.norm1.gamma"], p[f"{prefix}.norm1.beta"])
    x = sublayer(x, lambda z: feed_forward(z, p[f"{prefix}.ffn.w1"], p[f"{prefix}.ffn.b1"],
                                           p[f"{prefix}.ffn.w2"], p[f"{prefix}.ffn.b2"]),
                 p[f"{prefix}.norm2.gamma"], p[f"{prefix}.norm2.beta"])
    return x
