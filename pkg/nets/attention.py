import math
from typing import Optional

import numpy as np

from autodiff import ops
from autodiff.module import LayerNorm, Linear, Module
from autodiff.tensor import Tensor
from errors import ShapeMismatch

# Additive mask value; exp() of it underflows to exactly 0 in float64.
MASKED = -1e9


def causal_mask(length: int) -> np.ndarray:
    """(1, 1, T, T) additive mask hiding positions after the query."""
    upper = np.triu(np.ones((length, length), dtype=bool), k=1)
    return np.where(upper, MASKED, 0.0)[None, None]


def padding_mask(ids: np.ndarray, pad_id: int) -> np.ndarray:
    """(B, 1, 1, T) additive mask hiding [PAD] keys."""
    return np.where(np.asarray(ids) == pad_id, MASKED, 0.0)[:, None, None, :]


class MultiHeadAttention(Module):
    """Scaled dot-product attention; keys/values may be wider than the model (kv_dim)."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, kv_dim: Optional[int] = None):
        if d % heads:
            raise ValueError(f"d={d} not divisible by heads={heads}")
        self.d = d
        self.heads = heads
        self.head_dim = d // heads
        self.kv_dim = kv_dim or d
        self.q_proj = Linear(d, d, rng)
        self.k_proj = Linear(self.kv_dim, d, rng)
        self.v_proj = Linear(self.kv_dim, d, rng)
        self.out_proj = Linear(d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        bsz, seqlen, _ = x.shape
        x = ops.reshape(x, (bsz, seqlen, self.heads, self.head_dim))
        return ops.transpose(x, (0, 2, 1, 3))  # (B, heads, T, head_dim)

    def forward(self, queries: Tensor, keys: Tensor, values: Tensor,
                mask: Optional[np.ndarray] = None, return_weights: bool = False):
        if queries.ndim != 3 or queries.shape[-1] != self.d:
            raise ShapeMismatch("attention queries", queries.shape, (None, None, self.d))
        if keys.ndim != 3 or keys.shape[-1] != self.kv_dim or keys.shape[:2] != values.shape[:2]:
            raise ShapeMismatch("attention keys/values", keys.shape, values.shape)
        bsz, q_len, _ = queries.shape

        xq = self._split(self.q_proj(queries))
        xk = self._split(self.k_proj(keys))
        xv = self._split(self.v_proj(values))

        scores = ops.matmul(xq, ops.transpose(xk, (0, 1, 3, 2))) * (1.0 / math.sqrt(self.head_dim))
        if mask is not None:
            scores = scores + mask
        weights = ops.softmax(scores, axis=-1)
        context = ops.matmul(weights, xv)
        context = ops.reshape(ops.transpose(context, (0, 2, 1, 3)), (bsz, q_len, self.d))
        output = self.out_proj(context)
        if return_weights:
            return output, weights
        return output


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.relu(self.fc1(x)))


class EncoderBlock(Module):
    def __init__(self, d: int, heads: int, ff: int, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.mlp = FeedForward(d, ff, rng)
        self.layer_norm1 = LayerNorm(d)
        self.layer_norm2 = LayerNorm(d)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        h = self.layer_norm1(x)
        h = x + self.self_attn(h, h, h, mask)
        return h + self.mlp(self.layer_norm2(h))


class DecoderBlock(Module):
    def __init__(self, d: int, heads: int, ff: int, memory_dim: int, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.cross_attn = MultiHeadAttention(d, heads, rng, kv_dim=memory_dim)
        self.mlp = FeedForward(d, ff, rng)
        self.layer_norm1 = LayerNorm(d)
        self.layer_norm2 = LayerNorm(d)
        self.layer_norm3 = LayerNorm(d)

    def forward(self, x: Tensor, memory: Tensor, self_mask: np.ndarray,
                memory_mask: Optional[np.ndarray] = None) -> Tensor:
        h = self.layer_norm1(x)
        h = x + self.self_attn(h, h, h, self_mask)
        q = self.layer_norm2(h)
        h = h + self.cross_attn(q, memory, memory, memory_mask)
        return h + self.mlp(self.layer_norm3(h))
