"""Recurrence encoder: stacked ``Rec(.)`` + FFN layers over source embeddings.

``Rec`` is a bidirectional GRU (one state per source position) or an
attentive recurrent network, which runs a fixed number of GRU steps whose
inputs are attention summaries of the whole layer input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ConfigError, ContractError, ModelConfig
from .nn import FeedForward, LayerNorm, Linear, Module, glorot
from .tensor import Parameter, Tensor
from .transformer import MASK_FILL


@dataclass
class RecEncoderOutput:
    """Top recurrence-encoder states ``[B, L_r, d]`` and their padding mask."""

    states: Tensor
    pad_mask: np.ndarray


def masked_mean(x: Tensor, pad_mask: np.ndarray | None) -> Tensor:
    """Mean over axis 1 of ``[B, J, d]``, skipping padded positions."""
    if pad_mask is None or not pad_mask.any():
        return T.mean(x, axis=1)
    keep = (~pad_mask).astype(x.dtype)
    counts = keep.sum(axis=1, keepdims=True)
    weights = np.broadcast_to((keep / counts)[:, :, None], x.shape)
    return T.sum(T.mul(x, Tensor(np.ascontiguousarray(weights))), axis=1)


class GRUCell(Module):
    """Gated recurrent unit.

    z = sigmoid(W_z x + U_z h + b_z), r = sigmoid(W_r x + U_r h + b_r),
    h~ = tanh(W_h x + U_h (r * h) + b_h), h' = (1 - z) * h + z * h~.
    Input-side weights for the three gates are stored side by side in
    ``w_x`` (columns z | r | h~) so a whole sequence can be projected at once.
    """

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.d_in, self.d_hidden = d_in, d_hidden
        dtype = T.get_default_dtype()
        self.w_x = Parameter(np.concatenate(
            [glorot(rng, d_in, d_hidden) for _ in range(3)], axis=1))
        self.b = Parameter(np.zeros(3 * d_hidden, dtype=dtype))
        self.u_zr = Parameter(np.concatenate(
            [glorot(rng, d_hidden, d_hidden) for _ in range(2)], axis=1))
        self.u_h = Parameter(glorot(rng, d_hidden, d_hidden))

    def project_input(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w_x), self.b)

    def step(self, h: Tensor, x_proj: Tensor) -> Tensor:
        n = self.d_hidden
        zr = T.sigmoid(T.add(x_proj[..., : 2 * n], T.matmul(h, self.u_zr)))
        z, r = zr[..., :n], zr[..., n:]
        cand = T.tanh(T.add(x_proj[..., 2 * n:], T.matmul(T.mul(r, h), self.u_h)))
        return T.add(h, T.mul(z, T.sub(cand, h)))

    def __call__(self, h: Tensor, x: Tensor) -> Tensor:
        return self.step(h, self.project_input(x))


class InitialState(Module):
    """h_0 from the (masked) mean of the layer input.

    When the state is narrower than the input (each half of a bidirectional
    layer) the mean is mapped down by a learned affine projection.
    """

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.proj = Linear(d_in, d_hidden, rng) if d_in != d_hidden else None

    def __call__(self, x: Tensor, pad_mask: np.ndarray | None) -> Tensor:
        m = masked_mean(x, pad_mask)
        return m if self.proj is None else self.proj(m)


def _carry(h_prev: Tensor, h_new: Tensor, live: np.ndarray | None) -> Tensor:
    # rows where the position is padding keep their previous state
    if live is None:
        return h_new
    m = np.ascontiguousarray(np.broadcast_to(live[:, None], h_new.shape)).astype(h_new.dtype)
    return T.add(h_prev, T.mul(Tensor(m), T.sub(h_new, h_prev)))


class GRUDirection(Module):
    """One directional GRU pass over the positions of its input."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator, reverse: bool = False):
        self.init = InitialState(d_in, d_hidden, rng)
        self.cell = GRUCell(d_in, d_hidden, rng)
        self.reverse = reverse

    def __call__(self, x: Tensor, pad_mask: np.ndarray | None = None) -> Tensor:
        b, J, _ = x.shape
        h = self.init(x, pad_mask)
        xp = self.cell.project_input(x)
        any_pad = pad_mask is not None and pad_mask.any()
        out: list[Tensor | None] = [None] * J
        order = range(J - 1, -1, -1) if self.reverse else range(J)
        for j in order:
            h_new = self.cell.step(h, xp[:, j, :])
            h = _carry(h, h_new, ~pad_mask[:, j] if any_pad else None)
            out[j] = h
        return T.stack(out, axis=1)


class BiRNN(Module):
    """Bidirectional GRU; position ``j`` concatenates forward and backward states."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        if d_model % 2:
            raise ConfigError("d_model", f"birnn needs an even width, got {d_model}")
        half = d_model // 2
        self.forward = GRUDirection(d_model, half, rng)
        self.backward = GRUDirection(d_model, half, rng, reverse=True)

    def __call__(self, x: Tensor, pad_mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
        fw = self.forward(x, pad_mask)
        bw = self.backward(x, pad_mask)
        mask = pad_mask if pad_mask is not None else np.zeros(x.shape[:2], dtype=bool)
        return T.concat([fw, bw], axis=-1), mask


class ARN(Module):
    """Attentive recurrent network producing ``steps`` states.

    At step t the previous state queries the layer input with single-head
    scaled dot-product attention (learned query/key projections, values are
    the raw input rows) and the resulting context drives a GRU update.
    """

    def __init__(self, d_in: int, d_hidden: int, steps: int, rng: np.random.Generator):
        if steps < 1:
            raise ConfigError("rec_steps", f"must be >= 1, got {steps}")
        self.steps = steps
        self.init = InitialState(d_in, d_hidden, rng)
        self.query = Linear(d_hidden, d_hidden, rng)
        self.key = Linear(d_in, d_hidden, rng)
        self.cell = GRUCell(d_in, d_hidden, rng)

    def __call__(self, x: Tensor, pad_mask: np.ndarray | None = None,
                 step_mask: np.ndarray | None = None) -> list[Tensor]:
        """Run the recurrence; returns the ``steps`` states (each ``[B, d_hidden]``).

        ``step_mask`` (``[steps, J]``, True = allowed) further restricts which
        positions each step may attend; it exists for diagnostics.
        """
        b, J, _ = x.shape
        allowed = np.ones((b, J), dtype=bool) if pad_mask is None else ~pad_mask
        if step_mask is not None and step_mask.shape != (self.steps, J):
            raise ContractError(f"step_mask shape {step_mask.shape} != {(self.steps, J)}")
        h = self.init(x, pad_mask)
        keys_t = T.swapaxes(self.key(x), 1, 2)  # [B, d_h, J]
        inv_scale = 1.0 / np.sqrt(self.cell.d_hidden)
        out = []
        for t in range(self.steps):
            ok = allowed if step_mask is None else allowed & step_mask[t][None, :]
            if not ok.any(axis=-1).all():
                raise ContractError(f"ARN step {t}: every position masked")
            q = T.reshape(self.query(h), (b, 1, -1))
            scores = T.scale(T.matmul(q, keys_t), inv_scale)  # [B, 1, J]
            if not ok.all():
                bias = np.where(ok, 0.0, MASK_FILL).astype(scores.dtype)[:, None, :]
                scores = T.add(scores, Tensor(bias))
            w = T.softmax(scores, axis=-1)
            c = T.reshape(T.matmul(w, x), (b, -1))
            h = self.cell(h, c)
            out.append(h)
        return out

    def sequence(self, x: Tensor, pad_mask: np.ndarray | None = None,
                 step_mask: np.ndarray | None = None) -> Tensor:
        return T.stack(self(x, pad_mask, step_mask), axis=1)


class UniARN(Module):
    """Unidirectional ARN as a recurrence function (state width = d_model)."""

    def __init__(self, d_model: int, steps: int, rng: np.random.Generator):
        self.arn = ARN(d_model, d_model, steps, rng)

    def __call__(self, x: Tensor, pad_mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
        out = self.arn.sequence(x, pad_mask)
        return out, np.zeros(out.shape[:2], dtype=bool)


class BiARN(Module):
    """Two independent ARNs of half width.

    Output step t concatenates forward step t with backward step T+1-t.
    """

    def __init__(self, d_model: int, steps: int, rng: np.random.Generator):
        if d_model % 2:
            raise ConfigError("d_model", f"biarn needs an even width, got {d_model}")
        half = d_model // 2
        self.forward = ARN(d_model, half, steps, rng)
        self.backward = ARN(d_model, half, steps, rng)

    def __call__(self, x: Tensor, pad_mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
        fw = self.forward(x, pad_mask)
        bw = self.backward(x, pad_mask)
        steps = [T.concat([f, b], axis=-1) for f, b in zip(fw, reversed(bw))]
        out = T.stack(steps, axis=1)
        return out, np.zeros(out.shape[:2], dtype=bool)


def make_rec(cfg: ModelConfig, rng: np.random.Generator) -> Module:
    if cfg.recurrence == "birnn":
        return BiRNN(cfg.d_model, rng)
    if cfg.recurrence == "arn":
        return UniARN(cfg.d_model, cfg.rec_steps, rng)
    if cfg.recurrence == "biarn":
        return BiARN(cfg.d_model, cfg.rec_steps, rng)
    raise ConfigError("recurrence", f"no recurrence function for {cfg.recurrence!r}")


class RecurrenceLayer(Module):
    """``C = Ln(Rec(H) + H)`` (no residual at layer 1), then ``Ln(Ffn(C) + C)``."""

    def __init__(self, cfg: ModelConfig, layer_index: int, rng: np.random.Generator):
        if layer_index < 1:
            raise ConfigError("rec_layers", f"layer_index starts at 1, got {layer_index}")
        self.layer_index = layer_index
        self.rec = make_rec(cfg, rng)
        self.ln_rec = LayerNorm(cfg.d_model, cfg.ln_eps)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.ln_ffn = LayerNorm(cfg.d_model, cfg.ln_eps)

    @property
    def residual(self) -> bool:
        return self.layer_index > 1

    def __call__(self, h: Tensor, pad_mask: np.ndarray | None) -> tuple[Tensor, np.ndarray]:
        r, mask = self.rec(h, pad_mask)
        if self.residual:
            if r.shape != h.shape:
                raise ContractError(
                    f"residual around Rec at layer {self.layer_index} needs equal lengths, "
                    f"got {h.shape[1]} -> {r.shape[1]}")
            r = T.add(r, h)
        c = self.ln_rec(r)
        return self.ln_ffn(T.add(self.ffn(c), c)), mask


class RecurrenceEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.layers = [RecurrenceLayer(cfg, n + 1, rng) for n in range(cfg.rec_layers)]

    def __call__(self, e_in: Tensor, pad_mask: np.ndarray) -> RecEncoderOutput:
        h, mask = e_in, pad_mask
        for layer in self.layers:
            h, mask = layer(h, mask)
        return RecEncoderOutput(h, mask)
