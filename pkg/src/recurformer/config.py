"""Model configuration and the error types shared across the package."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

RECURRENCES = ("none", "birnn", "arn", "biarn")
INTEGRATIONS = ("gated_sum", "stack")
FEED_TARGETS = ("top", "all")

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
N_RESERVED = 4


class ConfigError(ValueError):
    """An inconsistent or out-of-range configuration value."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ContractError(RuntimeError):
    """A precondition of an operation was violated at call time."""


class WiringError(ContractError):
    """A layer was called without an input its wiring requires."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 32
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    dropout_rate: float = 0.0
    max_len: int = 64
    recurrence: str = "none"
    rec_layers: int = 1
    rec_steps: int = 6
    # None means "not chosen"; a recurrence variant falls back to stack.
    integration: str | None = None
    feed_target: str = "top"
    share_source_embeddings: bool = True
    positional_encoding: bool = True
    ln_eps: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for key in ("vocab_size", "d_model", "n_heads", "d_ff", "n_enc_layers",
                    "n_dec_layers", "max_len", "rec_layers"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(key, f"must be >= 1, got {getattr(self, key)}")
        if self.vocab_size < N_RESERVED:
            raise ConfigError("vocab_size", f"needs room for {N_RESERVED} reserved ids")
        if self.d_model % self.n_heads:
            raise ConfigError("n_heads", f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate", f"must lie in [0, 1), got {self.dropout_rate}")
        if self.recurrence not in RECURRENCES:
            raise ConfigError("recurrence", f"expected one of {RECURRENCES}, got {self.recurrence!r}")
        if self.integration is not None and self.integration not in INTEGRATIONS:
            raise ConfigError("integration", f"expected one of {INTEGRATIONS}, got {self.integration!r}")
        if self.feed_target not in FEED_TARGETS:
            raise ConfigError("feed_target", f"expected one of {FEED_TARGETS}, got {self.feed_target!r}")
        if self.recurrence in ("arn", "biarn") and self.rec_steps < 1:
            raise ConfigError("rec_steps", f"must be >= 1 for {self.recurrence}, got {self.rec_steps}")
        if self.recurrence in ("birnn", "biarn") and self.d_model % 2:
            raise ConfigError("d_model", f"{self.recurrence} splits d_model in two halves; got odd {self.d_model}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def has_recurrence(self) -> bool:
        return self.recurrence != "none"

    @property
    def resolved_integration(self) -> str | None:
        if not self.has_recurrence:
            return None
        return self.integration or "stack"

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(unknown[0], "unknown model config key")
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:10]

    def label(self) -> str:
        """Short human-readable id such as ``biarn1-stack-top-T6``."""
        if not self.has_recurrence:
            return "baseline"
        parts = [f"{self.recurrence}{self.rec_layers}", self.resolved_integration, self.feed_target]
        if self.recurrence in ("arn", "biarn"):
            parts.append(f"T{self.rec_steps}")
        return "-".join(parts)
