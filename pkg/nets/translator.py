"""Property-conditioned Transformer encoder-decoder.

The last encoder layer's token vectors are concatenated with (p_X, p_Y), so
every position the decoder cross-attends to has width d + 2k.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, model_validator

from autodiff import ops
from autodiff.module import Embedding, LayerNorm, Linear, Module
from autodiff.tensor import Tensor
from config import N_PROPERTIES, ModelConfig
from errors import ShapeMismatch, TooLong
from nets.attention import DecoderBlock, EncoderBlock, causal_mask, padding_mask


class TranslatorConfig(BaseModel):
    d: int
    heads: int
    enc_layers: int
    dec_layers: int
    ff: int
    V: int
    M: int
    k: int = N_PROPERTIES
    pad_id: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.M < 3:
            raise ValueError("M must be at least 3")
        if self.k != N_PROPERTIES:
            raise ValueError(f"k must be {N_PROPERTIES}")
        return self

    @classmethod
    def from_model_config(cls, cfg: ModelConfig, vocab_size: int) -> "TranslatorConfig":
        return cls(d=cfg.d, heads=cfg.heads, enc_layers=cfg.enc_layers, dec_layers=cfg.dec_layers,
                   ff=cfg.ff, V=vocab_size, M=cfg.max_len, k=cfg.k)

    @property
    def memory_dim(self) -> int:
        return self.d + 2 * self.k


@dataclass
class EncoderOutput:
    states: Tensor           # (B, T, d + 2k)
    key_mask: np.ndarray     # (B, 1, 1, T) additive

    @property
    def width(self) -> int:
        return self.states.shape[-1]

    def take(self, rows) -> "EncoderOutput":
        """Inference-only row selection, e.g. repeating one input across beams."""
        rows = np.asarray(rows, dtype=np.int64)
        return EncoderOutput(Tensor(self.states.value[rows]), self.key_mask[rows])


def sinusoidal_encoding(length: int, d: int) -> np.ndarray:
    position = np.arange(length)[:, None]
    div = np.exp(np.arange(0, d, 2) * (-math.log(10000.0) / d))
    table = np.zeros((length, d))
    table[:, 0::2] = np.sin(position * div)
    table[:, 1::2] = np.cos(position * div)[:, : d // 2]
    return table


class Translator(Module):
    def __init__(self, cfg: TranslatorConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embedding = Embedding(cfg.V, cfg.d, rng)
        self.encoder = [EncoderBlock(cfg.d, cfg.heads, cfg.ff, rng) for _ in range(cfg.enc_layers)]
        self.enc_norm = LayerNorm(cfg.d)
        self.decoder = [DecoderBlock(cfg.d, cfg.heads, cfg.ff, cfg.memory_dim, rng)
                        for _ in range(cfg.dec_layers)]
        self.dec_norm = LayerNorm(cfg.d)
        self.output = Linear(cfg.d, cfg.V, rng)
        self._positions = sinusoidal_encoding(cfg.M, cfg.d)

    def _embed(self, ids: np.ndarray) -> Tensor:
        seqlen = ids.shape[1]
        return self.embedding(ids) * math.sqrt(self.cfg.d) + self._positions[:seqlen]

    def encode(self, x_ids, p_x, p_y) -> EncoderOutput:
        x_ids = np.asarray(x_ids, dtype=np.int64)
        if x_ids.ndim != 2:
            raise ShapeMismatch("encode ids", x_ids.shape)
        bsz, seqlen = x_ids.shape
        if seqlen > self.cfg.M:
            raise TooLong(seqlen, self.cfg.M)
        props = np.concatenate([np.asarray(p_x, dtype=np.float64).reshape(bsz, -1),
                                np.asarray(p_y, dtype=np.float64).reshape(bsz, -1)], axis=-1)
        if props.shape[-1] != 2 * self.cfg.k:
            raise ShapeMismatch("encode properties", props.shape, (bsz, 2 * self.cfg.k))

        mask = padding_mask(x_ids, self.cfg.pad_id)
        h = self._embed(x_ids)
        for block in self.encoder:
            h = block(h, mask)
        z = self.enc_norm(h)
        enrich = Tensor(np.broadcast_to(props[:, None, :], (bsz, seqlen, 2 * self.cfg.k)))
        return EncoderOutput(ops.concat([z, enrich], axis=-1), mask)

    def decode(self, enc: EncoderOutput, prefix_ids) -> Tensor:
        """Logits (B, t, V) at every prefix position (teacher forcing)."""
        prefix_ids = np.asarray(prefix_ids, dtype=np.int64)
        seqlen = prefix_ids.shape[1]
        if seqlen > self.cfg.M:
            raise TooLong(seqlen, self.cfg.M)
        if prefix_ids.shape[0] != enc.states.shape[0]:
            raise ShapeMismatch("decode batch", prefix_ids.shape, enc.states.shape)
        h = self._embed(prefix_ids)
        self_mask = causal_mask(seqlen)
        for block in self.decoder:
            h = block(h, enc.states, self_mask, enc.key_mask)
        return self.output(self.dec_norm(h))

    def decode_step(self, enc: EncoderOutput, prefix_ids) -> Tensor:
        """Next-token logits (B, V) after ``prefix_ids``."""
        prefix_ids = np.asarray(prefix_ids, dtype=np.int64)
        if prefix_ids.shape[1] >= self.cfg.M:
            raise TooLong(prefix_ids.shape[1] + 1, self.cfg.M)
        logits = self.decode(enc, prefix_ids)
        return logits[:, -1, :]


def teacher_forcing(y_ids: np.ndarray):
    """Split padded targets into (decoder input, expected next tokens)."""
    y_ids = np.asarray(y_ids, dtype=np.int64)
    return y_ids[:, :-1], y_ids[:, 1:]


def translation_loss(logits: Tensor, targets, pad_id: int = 0) -> Tensor:
    """Cross entropy averaged over non-[PAD] target positions."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 3 or logits.shape[:2] != targets.shape:
        raise ShapeMismatch("translation_loss", logits.shape, targets.shape)
    keep = (targets != pad_id).astype(np.float64)
    count = keep.sum()
    if count == 0:
        raise ShapeMismatch("translation_loss (no target tokens)", targets.shape)
    picked = np.eye(logits.shape[-1])[targets] * keep[..., None]
    log_probs = ops.log_softmax(logits, axis=-1)
    return -ops.sum_(log_probs * picked) * (1.0 / count)


def token_accuracy(logits, targets, pad_id: int = 0) -> float:
    values = logits.value if isinstance(logits, Tensor) else np.asarray(logits)
    targets = np.asarray(targets)
    keep = targets != pad_id
    if not keep.any():
        return 0.0
    return float(((values.argmax(axis=-1) == targets) & keep).sum() / keep.sum())


def build_translator(cfg: TranslatorConfig, seed: Optional[int] = 0) -> Translator:
    return Translator(cfg, np.random.default_rng(seed))
