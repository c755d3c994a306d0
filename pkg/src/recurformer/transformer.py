"""Standard Transformer encoder and decoder layers (post-norm)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ConfigError, ContractError, ModelConfig
from .nn import Dropout, FeedForward, LayerNorm, Linear, Module
from .tensor import Parameter, Tensor

MASK_FILL = -1e9


@dataclass
class EncoderState:
    """Top-layer states ``[B, J, d]`` with ``pad_mask`` ``[B, J]`` (True at padding)."""

    states: Tensor
    pad_mask: np.ndarray

    def __post_init__(self):
        if self.pad_mask.shape != self.states.shape[:2]:
            raise ContractError(f"pad_mask {self.pad_mask.shape} vs states {self.states.shape}")


def positional_encoding(length: int, d_model: int, max_len: int | None = None, dtype=None) -> np.ndarray:
    """Sinusoidal table: even columns ``sin``, odd columns ``cos``."""
    if max_len is not None and length > max_len:
        raise ConfigError("max_len", f"sequence length {length} exceeds max_len={max_len}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d_model)
    table = np.zeros((length, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return table.astype(dtype or T.get_default_dtype())


def causal_mask(length: int) -> np.ndarray:
    """``[L, L]`` boolean, True where query ``i`` may see key ``j <= i``."""
    return np.tril(np.ones((length, length), dtype=bool))


def key_mask(pad_mask: np.ndarray) -> np.ndarray:
    """``[B, 1, 1, J]`` allowed-key mask from a ``[B, J]`` padding mask."""
    return ~pad_mask[:, None, None, :]


def sdp_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None,
                  dropout: Dropout | None = None, return_weights: bool = False):
    """Scaled dot-product attention over the last two axes.

    ``mask`` is a boolean array broadcastable to the score shape, True where
    a key may be attended.  Every query row needs at least one allowed key.
    """
    d_k = q.shape[-1]
    scores = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / np.sqrt(d_k))
    if mask is not None:
        allowed = np.broadcast_to(mask, scores.shape)
        if not allowed.any(axis=-1).all():
            raise ContractError("attention row with every key masked")
        bias = np.where(allowed, 0.0, MASK_FILL).astype(scores.dtype)
        scores = T.add(scores, Tensor(bias))
    weights = T.softmax(scores, axis=-1)
    if dropout is not None:
        weights = dropout(weights)
    out = T.matmul(weights, v)
    return (out, weights) if return_weights else out


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, dropout_rate: float = 0.0):
        if d_model % n_heads:
            raise ConfigError("n_heads", f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.q_proj = Linear(d_model, d_model, rng)
        self.k_proj = Linear(d_model, d_model, rng)
        self.v_proj = Linear(d_model, d_model, rng)
        self.out_proj = Linear(d_model, d_model, rng)
        self.attn_dropout = Dropout(dropout_rate, rng)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return T.swapaxes(T.reshape(x, (b, n, self.n_heads, d // self.n_heads)), 1, 2)

    def __call__(self, query: Tensor, key: Tensor, value: Tensor, mask: np.ndarray | None = None) -> Tensor:
        b, n, d = query.shape
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))
        out, w = sdp_attention(q, k, v, mask, self.attn_dropout, return_weights=True)
        self.last_weights = w.data
        out = T.reshape(T.swapaxes(out, 1, 2), (b, n, d))
        return self.out_proj(out)


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, cfg.dropout_rate)
        self.ln_attn = LayerNorm(cfg.d_model, cfg.ln_eps)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.ln_ffn = LayerNorm(cfg.d_model, cfg.ln_eps)
        self.drop = Dropout(cfg.dropout_rate, rng)

    def __call__(self, h: Tensor, pad_mask: np.ndarray) -> Tensor:
        mask = key_mask(pad_mask)
        c = self.ln_attn(T.add(self.drop(self.self_attn(h, h, h, mask)), h))
        return self.ln_ffn(T.add(self.drop(self.ffn(c)), c))


class TransformerEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.n_enc_layers)]

    def __call__(self, x: Tensor, pad_mask: np.ndarray) -> EncoderState:
        h = x
        for layer in self.layers:
            h = layer(h, pad_mask)
        return EncoderState(h, pad_mask)


class TokenEmbedding(Module):
    """Lookup scaled by ``sqrt(d_model)``; optional sinusoidal positions."""

    def __init__(self, vocab_size: int, d_model: int, rng: np.random.Generator, max_len: int):
        table = rng.normal(0.0, d_model ** -0.5, size=(vocab_size, d_model))
        self.table = Parameter(table.astype(T.get_default_dtype()))
        self.d_model = d_model
        self.max_len = max_len

    def __call__(self, ids: np.ndarray, positions: bool = True) -> Tensor:
        ids = np.asarray(ids)
        e = T.scale(T.embedding(self.table, ids), np.sqrt(self.d_model))
        if not positions:
            return e
        pe = positional_encoding(ids.shape[-1], self.d_model, self.max_len, dtype=e.dtype)
        return T.add(e, Tensor(pe))


class DecoderLayerBase(Module):
    """Masked self-attention, cross-attention to the encoder, then FFN."""

    has_recurrence_input = False

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, cfg.dropout_rate)
        self.ln_self = LayerNorm(cfg.d_model, cfg.ln_eps)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, cfg.dropout_rate)
        self.ln_cross = LayerNorm(cfg.d_model, cfg.ln_eps)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.ln_ffn = LayerNorm(cfg.d_model, cfg.ln_eps)
        self.drop = Dropout(cfg.dropout_rate, rng)

    @property
    def n_sublayers(self) -> int:
        return 3

    def self_block(self, h: Tensor, self_mask: np.ndarray) -> Tensor:
        return self.ln_self(T.add(self.drop(self.self_attn(h, h, h, self_mask)), h))

    def cross_block(self, c: Tensor, enc: EncoderState) -> Tensor:
        att = self.cross_attn(c, enc.states, enc.states, key_mask(enc.pad_mask))
        return self.ln_cross(T.add(self.drop(att), c))

    def ffn_block(self, x: Tensor) -> Tensor:
        return self.ln_ffn(T.add(self.drop(self.ffn(x)), x))

    def __call__(self, h: Tensor, enc: EncoderState, rec=None, self_mask: np.ndarray | None = None) -> Tensor:
        if self_mask is None:
            self_mask = causal_mask(h.shape[1])
        c = self.self_block(h, self_mask)
        d = self.cross_block(c, enc)
        return self.ffn_block(d)
