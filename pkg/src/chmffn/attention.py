"""Scaled dot-product attention, multi-head wrappers, and the post-norm
transformer encoder/decoder layers used by the feature subnetwork.

Tokens are flattened spatial positions of a patch, so sequences are short
(patch*patch). Sinusoidal position encodings mark token order; masked
positions receive a -1e9 score bias, which underflows to exactly zero weight
after the shift-stabilized softmax.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .autodiff import Rng, Tensor, matmul, mul, reshape, softmax, transpose
from .errors import ShapeError
from .layers import Linear, LayerNorm, Module, relu

__all__ = [
    "positional_encoding",
    "causal_mask",
    "scaled_dot_product_attention",
    "MultiHeadAttention",
    "FeedForward",
    "EncoderLayer",
    "DecoderLayer",
]

MASK_BIAS = -1e9


def positional_encoding(seq_len: int, dim: int) -> Tensor:
    """Sinusoidal table (seq_len, dim): even columns sin(pos / 10000^(2i/dim)),
    odd columns the matching cos. Requires an even dim."""
    if dim < 2 or dim % 2 != 0:
        raise ShapeError(f"positional encoding needs an even dim >= 2, got {dim}")
    if seq_len < 1:
        raise ShapeError(f"seq_len must be positive, got {seq_len}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.zeros((seq_len, dim))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return Tensor(table)


def causal_mask(size: int) -> np.ndarray:
    """Boolean (size, size) mask, True where query i may attend key j (j <= i)."""
    return np.tril(np.ones((size, size), dtype=bool))


def scaled_dot_product_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: Optional[np.ndarray] = None,
    return_weights: bool = False,
):
    """softmax(q k^T / sqrt(d_k) + bias) v with optional boolean mask
    (True = may attend). Works on (s, d) pairs or batched (..., s, d) stacks
    with equal leading dims. Every query row must keep at least one visible key."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key dims differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key/value counts differ: {k.shape} vs {v.shape}")
    dk = q.shape[-1]
    swap = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scores = mul(matmul(q, transpose(k, swap)), Tensor(np.float64(1.0 / math.sqrt(dk))))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q.shape[-2], k.shape[-2]):
            raise ShapeError(f"mask must be ({q.shape[-2]},{k.shape[-2]}), got {mask.shape}")
        if not mask.any(axis=-1).all():
            raise ShapeError("a query row is fully masked; every row needs a visible key")
        scores = scores + Tensor(np.where(mask, 0.0, MASK_BIAS))
    weights = softmax(scores, axis=-1)
    out = matmul(weights, v)
    if return_weights:
        return out, weights
    return out


class FeedForward(Module):
    """Two linear maps with a ReLU between, applied tokenwise."""

    def __init__(self, dim: int, hidden: int, rng: Rng):
        super().__init__()
        self.lin1 = Linear(dim, hidden, rng)
        self.lin2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        b, s, d = x.shape
        flat = reshape(x, (b * s, d))
        out = self.lin2(relu(self.lin1(flat)))
        return reshape(out, (b, s, d))


class MultiHeadAttention(Module):
    """Learned q/k/v projections, per-head attention, concat, and an output
    projection. Accepts (s, d) or (b, s, d) token stacks."""

    def __init__(self, dim: int, heads: int, rng: Rng):
        super().__init__()
        if dim % heads != 0:
            raise ShapeError(f"dim {dim} must divide evenly into {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def _project(self, lin: Linear, x: Tensor) -> Tensor:
        b, s, d = x.shape
        y = lin(reshape(x, (b * s, d)))
        y = reshape(y, (b, s, self.heads, self.head_dim))
        return transpose(y, (0, 2, 1, 3))

    def forward(self, q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        squeeze = q.ndim == 2
        if squeeze:
            q = reshape(q, (1,) + q.shape)
            k = reshape(k, (1,) + k.shape)
            v = reshape(v, (1,) + v.shape)
        if q.shape[-1] != self.dim or k.shape[-1] != self.dim or v.shape[-1] != self.dim:
            raise ShapeError(f"token dim must be {self.dim}")
        b, s, _ = q.shape
        qh = self._project(self.wq, q)
        kh = self._project(self.wk, k)
        vh = self._project(self.wv, v)
        ctx = scaled_dot_product_attention(qh, kh, vh, mask)
        merged = reshape(transpose(ctx, (0, 2, 1, 3)), (b * s, self.dim))
        out = reshape(self.wo(merged), (b, s, self.dim))
        if squeeze:
            out = reshape(out, out.shape[1:])
        return out


class EncoderLayer(Module):
    """Post-norm block: E = LN2(inner + FFN(inner)), inner = LN1(x + MHSA(x))."""

    def __init__(self, dim: int, heads: int, ffn_hidden: int, rng: Rng):
        super().__init__()
        self.mhsa = MultiHeadAttention(dim, heads, rng)
        self.ln1 = LayerNorm(dim)
        self.ln2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_hidden, rng)

    def forward(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 2
        if squeeze:
            x = reshape(x, (1,) + x.shape)
        inner = self.ln1(x + self.mhsa(x, x, x))
        out = self.ln2(inner + self.ffn(inner))
        if squeeze:
            out = reshape(out, out.shape[1:])
        return out


class DecoderLayer(Module):
    """Post-norm decoder block: masked self-attention, cross-attention onto the
    encoder-side tokens (queries come from the masked-attention output), then a
    feed-forward, each followed by an add+LayerNorm."""

    def __init__(self, dim: int, heads: int, ffn_hidden: int, rng: Rng, causal: bool = True):
        super().__init__()
        self.causal = causal
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.cross_attn = MultiHeadAttention(dim, heads, rng)
        self.ln1 = LayerNorm(dim)
        self.ln2 = LayerNorm(dim)
        self.ln3 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_hidden, rng)

    def forward(self, dec_in: Tensor, enc_out: Tensor) -> Tensor:
        squeeze = dec_in.ndim == 2
        if squeeze:
            dec_in = reshape(dec_in, (1,) + dec_in.shape)
            enc_out = reshape(enc_out, (1,) + enc_out.shape)
        mask = causal_mask(dec_in.shape[1]) if self.causal else None
        x_m = self.ln1(dec_in + self.self_attn(dec_in, dec_in, dec_in, mask))
        x_c = self.ln2(x_m + self.cross_attn(x_m, enc_out, enc_out))
        out = self.ln3(x_c + self.ffn(x_c))
        if squeeze:
            out = reshape(out, out.shape[1:])
        return out
