"""Decoder-side fusion of the Transformer encoder and the recurrence encoder."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ConfigError, ModelConfig, WiringError
from .nn import LayerNorm, Linear, Module
from .recurrence import RecEncoderOutput
from .tensor import Tensor
from .transformer import DecoderLayerBase, EncoderState, MultiHeadAttention, causal_mask, key_mask


class Gate(Module):
    """Elementwise sigmoid gate from an affine map of ``[a ; b]``; mixes ``g*a + (1-g)*b``."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.proj = Linear(2 * d_model, d_model, rng)
        self.last_value: np.ndarray | None = None

    def weights(self, a: Tensor, b: Tensor) -> Tensor:
        lam = T.sigmoid(self.proj(T.concat([a, b], axis=-1)))
        self.last_value = lam.data
        return lam

    def __call__(self, a: Tensor, b: Tensor) -> Tensor:
        lam = self.weights(a, b)
        return T.add(b, T.mul(lam, T.sub(a, b)))


class _IntegrationLayer(DecoderLayerBase):
    has_recurrence_input = True

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__(cfg, rng)
        self.rec_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, cfg.dropout_rate)
        self.ln_rec = LayerNorm(cfg.d_model, cfg.ln_eps)

    @property
    def n_sublayers(self) -> int:
        return 4

    def rec_block(self, query: Tensor, rec: RecEncoderOutput | None) -> Tensor:
        if rec is None:
            raise WiringError(f"{type(self).__name__} needs the recurrence encoder output")
        att = self.rec_attn(query, rec.states, rec.states, key_mask(rec.pad_mask))
        return self.ln_rec(T.add(self.drop(att), query))


class GatedSumLayer(_IntegrationLayer):
    """Both encoders are attended from the self-attention output and gated together."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__(cfg, rng)
        self.gate = Gate(cfg.d_model, rng)

    def __call__(self, h: Tensor, enc: EncoderState, rec: RecEncoderOutput | None = None,
                 self_mask: np.ndarray | None = None) -> Tensor:
        if self_mask is None:
            self_mask = causal_mask(h.shape[1])
        c = self.self_block(h, self_mask)
        d = self.cross_block(c, enc)
        r = self.rec_block(c, rec)
        return self.ffn_block(self.gate(d, r))


class StackLayer(_IntegrationLayer):
    """The recurrence encoder is attended with the cross-attention output as query."""

    def __call__(self, h: Tensor, enc: EncoderState, rec: RecEncoderOutput | None = None,
                 self_mask: np.ndarray | None = None) -> Tensor:
        if self_mask is None:
            self_mask = causal_mask(h.shape[1])
        c = self.self_block(h, self_mask)
        d = self.cross_block(c, enc)
        r = self.rec_block(d, rec)
        return self.ffn_block(r)


INTEGRATION_LAYERS = {"gated_sum": GatedSumLayer, "stack": StackLayer}


def build_decoder_layers(cfg: ModelConfig, rng: np.random.Generator) -> list[DecoderLayerBase]:
    """Decoder stack for ``cfg``.

    ``feed_target="top"`` makes only the last layer an integration layer;
    ``"all"`` makes every layer one; no recurrence gives plain layers.
    """
    n = cfg.n_dec_layers
    if not cfg.has_recurrence:
        if cfg.integration is not None:
            raise ConfigError("integration", "set without a recurrence encoder")
        return [DecoderLayerBase(cfg, rng) for _ in range(n)]
    cls = INTEGRATION_LAYERS[cfg.resolved_integration]
    if cfg.feed_target == "all":
        return [cls(cfg, rng) for _ in range(n)]
    return [DecoderLayerBase(cfg, rng) for _ in range(n - 1)] + [cls(cfg, rng)]
