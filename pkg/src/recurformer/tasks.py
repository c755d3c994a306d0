"""Synthetic copy / reverse / sort transduction tasks and padded batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .config import BOS_ID, EOS_ID, N_RESERVED, PAD_ID, ConfigError

TASK_KINDS = ("copy", "reverse", "sort")

Pair = tuple[list[int], list[int]]


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "copy"
    vocab_size: int = 32
    len_min: int = 3
    len_max: int = 10
    n_train: int = 5000
    n_eval: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError("task", f"expected one of {TASK_KINDS}, got {self.kind!r}")
        if self.vocab_size < N_RESERVED + 1:
            raise ConfigError("vocab_size", f"ids 0..{N_RESERVED - 1} are reserved; need at least {N_RESERVED + 1}")
        if self.len_min < 1 or self.len_max < self.len_min:
            raise ConfigError("len_min", f"need 1 <= len_min <= len_max, got {self.len_min}..{self.len_max}")
        if self.n_train < 1 or self.n_eval < 0:
            raise ConfigError("n_train", "n_train must be >= 1 and n_eval >= 0")


def transduce(kind: str, src: Sequence[int]) -> list[int]:
    if kind == "copy":
        return list(src)
    if kind == "reverse":
        return list(src)[::-1]
    if kind == "sort":
        return sorted(src)
    raise ConfigError("task", f"unknown task kind {kind!r}")


def sample_sequence(rng: np.random.Generator, vocab_size: int, len_min: int, len_max: int) -> list[int]:
    n = int(rng.integers(len_min, len_max + 1))
    return rng.integers(N_RESERVED, vocab_size, size=n).tolist()


def gen_task(spec: TaskSpec) -> tuple[list[Pair], list[Pair]]:
    """Deterministic (train, eval) pair lists; eval sources never occur in train."""
    train_rng, eval_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(2))
    train = []
    for _ in range(spec.n_train):
        src = sample_sequence(train_rng, spec.vocab_size, spec.len_min, spec.len_max)
        train.append((src, transduce(spec.kind, src)))
    seen = {tuple(s) for s, _ in train}
    evals = []
    attempts = 0
    while len(evals) < spec.n_eval:
        attempts += 1
        if attempts > 1000 * (spec.n_eval + 1):
            raise ConfigError("n_eval", "cannot draw enough held-out sequences disjoint from train")
        src = sample_sequence(eval_rng, spec.vocab_size, spec.len_min, spec.len_max)
        if tuple(src) in seen:
            continue
        seen.add(tuple(src))
        evals.append((src, transduce(spec.kind, src)))
    return train, evals


@dataclass
class Batch:
    src_ids: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray

    @property
    def src_pad_mask(self) -> np.ndarray:
        return self.src_ids == PAD_ID

    @property
    def tgt_pad_mask(self) -> np.ndarray:
        return self.tgt_out == PAD_ID

    @property
    def n_tokens(self) -> int:
        return int((~self.tgt_pad_mask).sum())

    def __len__(self) -> int:
        return self.src_ids.shape[0]


def pad_sequences(seqs: Sequence[Sequence[int]], width: int | None = None) -> np.ndarray:
    width = width or max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def make_batch(pairs: Sequence[Pair]) -> Batch:
    """``tgt_in = [BOS] + tgt`` and ``tgt_out = tgt + [EOS]``, right-padded."""
    src = pad_sequences([s for s, _ in pairs])
    tgt_in = pad_sequences([[BOS_ID] + list(t) for _, t in pairs])
    tgt_out = pad_sequences([list(t) + [EOS_ID] for _, t in pairs])
    return Batch(src, tgt_in, tgt_out)


def iterate_batches(pairs: Sequence[Pair], batch_size: int, rng: np.random.Generator) -> Iterator[Batch]:
    """Endless stream of shuffled batches (reshuffled every epoch)."""
    n = len(pairs)
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            idx = order[start:start + batch_size]
            yield make_batch([pairs[i] for i in idx])
