"""Encoder-decoder model with an optional recurrence encoder."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import PAD_ID, ModelConfig
from .integration import build_decoder_layers
from .nn import Linear, Module
from .recurrence import RecEncoderOutput, RecurrenceEncoder
from .tensor import Tensor, default_dtype
from .transformer import EncoderState, TokenEmbedding, TransformerEncoder, causal_mask


class Seq2Seq(Module):
    def __init__(self, cfg: ModelConfig, dtype=None):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        with default_dtype(dtype or T.get_default_dtype()):
            self.src_embed = TokenEmbedding(cfg.vocab_size, cfg.d_model, rng, cfg.max_len)
            self.encoder = TransformerEncoder(cfg, rng)
            self.rec_embed = None
            self.rec_encoder = None
            if cfg.has_recurrence:
                if not cfg.share_source_embeddings:
                    self.rec_embed = TokenEmbedding(cfg.vocab_size, cfg.d_model, rng, cfg.max_len)
                self.rec_encoder = RecurrenceEncoder(cfg, rng)
            self.tgt_embed = TokenEmbedding(cfg.vocab_size, cfg.d_model, rng, cfg.max_len)
            self.decoder_layers = build_decoder_layers(cfg, rng)
            self.generator = Linear(cfg.d_model, cfg.vocab_size, rng)

    # -- encoding ------------------------------------------------------
    def source_embeddings(self, src: np.ndarray) -> tuple[Tensor, Tensor]:
        """(Transformer-encoder input, recurrence-encoder input ``E_in``)."""
        src = np.asarray(src)
        x = self.src_embed(src, positions=self.cfg.positional_encoding)
        table = self.rec_embed or self.src_embed
        e_in = table(src, positions=False)
        return x, e_in

    def encode(self, src: np.ndarray) -> tuple[EncoderState, RecEncoderOutput | None]:
        src = np.asarray(src)
        pad = src == PAD_ID
        x, e_in = self.source_embeddings(src)
        enc = self.encoder(x, pad)
        rec = self.rec_encoder(e_in, pad) if self.rec_encoder is not None else None
        return enc, rec

    # -- decoding ------------------------------------------------------
    def decode(self, tgt_in: np.ndarray, enc: EncoderState, rec: RecEncoderOutput | None) -> Tensor:
        tgt_in = np.asarray(tgt_in)
        h = self.tgt_embed(tgt_in, positions=self.cfg.positional_encoding)
        mask = causal_mask(tgt_in.shape[1])
        for layer in self.decoder_layers:
            h = layer(h, enc, rec, mask)
        return self.generator(h)

    def __call__(self, src: np.ndarray, tgt_in: np.ndarray) -> Tensor:
        enc, rec = self.encode(src)
        return self.decode(tgt_in, enc, rec)

    def loss(self, src: np.ndarray, tgt_in: np.ndarray, tgt_out: np.ndarray) -> Tensor:
        return T.cross_entropy(self(src, tgt_in), tgt_out, pad_id=PAD_ID)

    # -- bookkeeping ---------------------------------------------------
    def recurrence_parameters(self) -> int:
        n = 0
        if self.rec_encoder is not None:
            n += self.rec_encoder.num_parameters()
        if self.rec_embed is not None:
            n += self.rec_embed.num_parameters()
        return n
