"""Linear probes on frozen, mean-pooled encoder representations."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import N_RESERVED, ConfigError, ContractError
from .integration import Gate
from .model import Seq2Seq
from .nn import Linear, Module
from .recurrence import masked_mean
from .tasks import pad_sequences
from .tensor import Tensor, default_dtype, no_grad
from .training import Adam

PROBE_KINDS = ("selen", "wc", "bshif")
PROBE_HEADER = ("task", "model_config_id", "accuracy", "n_train", "n_test", "seed")


@dataclass(frozen=True)
class ProbeTask:
    kind: str = "selen"
    n_examples: int = 600
    seed: int = 0
    vocab_size: int = 32
    len_min: int = 3
    len_max: int = 10
    n_length_buckets: int = 4
    # the token whose presence the ``wc`` probe detects
    probe_token: int = N_RESERVED

    def __post_init__(self):
        if self.kind not in PROBE_KINDS:
            raise ConfigError("probe_tasks", f"expected kinds from {PROBE_KINDS}, got {self.kind!r}")
        if self.kind == "bshif" and self.len_min < 2:
            raise ConfigError("len_min", "bshif needs sequences of length >= 2")
        if self.kind == "selen" and self.len_max - self.len_min + 1 < self.n_length_buckets:
            raise ConfigError("n_length_buckets", "more buckets than distinct lengths")

    @property
    def n_classes(self) -> int:
        return self.n_length_buckets if self.kind == "selen" else 2


def length_buckets(len_min: int, len_max: int, n: int) -> list[range]:
    edges = np.linspace(len_min, len_max + 1, n + 1).round().astype(int)
    return [range(edges[i], edges[i + 1]) for i in range(n)]


def gen_probe(task: ProbeTask) -> tuple[list[list[int]], np.ndarray]:
    """Class-balanced (sequences, labels); label ``i`` is assigned round-robin."""
    rng = np.random.default_rng(np.random.SeedSequence([task.seed, 7, PROBE_KINDS.index(task.kind)]))
    lo, hi, V = task.len_min, task.len_max, task.vocab_size
    seqs, labels = [], []
    buckets = length_buckets(lo, hi, task.n_length_buckets)
    for i in range(task.n_examples):
        y = i % task.n_classes
        if task.kind == "selen":
            n = int(rng.choice(list(buckets[y])))
            s = rng.integers(N_RESERVED, V, size=n).tolist()
        elif task.kind == "wc":
            n = int(rng.integers(lo, hi + 1))
            others = [t for t in range(N_RESERVED, V) if t != task.probe_token]
            s = rng.choice(others, size=n).tolist()
            if y == 1:
                s[int(rng.integers(n))] = task.probe_token
        else:
            n = int(rng.integers(lo, hi + 1))
            while True:
                s = sorted(rng.integers(N_RESERVED, V, size=n).tolist())
                spots = [j for j in range(n - 1) if s[j] != s[j + 1]]
                if spots:
                    break
            if y == 1:
                j = int(rng.choice(spots))
                s[j], s[j + 1] = s[j + 1], s[j]
        seqs.append(s)
        labels.append(y)
    return seqs, np.asarray(labels)


def bshif_label(seq: Sequence[int]) -> int:
    """Pure-function label for ``bshif``: 1 iff the sequence is not sorted."""
    return int(any(a > b for a, b in zip(seq, seq[1:])))


def selen_label(seq: Sequence[int], task: ProbeTask) -> int:
    for i, b in enumerate(length_buckets(task.len_min, task.len_max, task.n_length_buckets)):
        if len(seq) in b:
            return i
    raise ValueError(f"length {len(seq)} outside {task.len_min}..{task.len_max}")


def pooled_states(model: Seq2Seq, src, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray | None]:
    """Mean-pooled top-layer states of both encoders (the second is None for a baseline)."""
    seqs = [list(s) for s in src]
    if not seqs or any(len(s) == 0 for s in seqs):
        raise ContractError("sentence representation of an empty sequence")
    was_training = model.training
    model.eval()
    e_out, r_out = [], []
    with no_grad():
        for i in range(0, len(seqs), batch_size):
            ids = pad_sequences(seqs[i:i + batch_size])
            enc, rec = model.encode(ids)
            e_out.append(masked_mean(enc.states, enc.pad_mask).data)
            if rec is not None:
                r_out.append(masked_mean(rec.states, rec.pad_mask).data)
    model.train(was_training)
    return np.concatenate(e_out), (np.concatenate(r_out) if r_out else None)


def sentence_repr(model: Seq2Seq, src, gate: Gate | None = None) -> Tensor:
    """``[n, d_model]`` sentence vectors.

    A baseline yields the mean-pooled Transformer-encoder states.  A dual
    encoder mixes both pooled vectors through ``gate`` (a fresh one if none
    is given); ``gate(e, r) = g*e + (1-g)*r``.
    """
    e, r = pooled_states(model, src)
    if r is None:
        return Tensor(e)
    if gate is None:
        with default_dtype(e.dtype):
            gate = Gate(model.cfg.d_model, np.random.default_rng(model.cfg.seed))
    return gate(Tensor(e), Tensor(r))


@dataclass
class ProbeHyperparams:
    steps: int = 400
    lr: float = 0.05
    l2: float = 1e-4
    train_fraction: float = 0.8
    seed: int = 0
    tol: float = 1e-7


class _Probe(Module):
    def __init__(self, d: int, n_classes: int, dual: bool, rng: np.random.Generator):
        self.gate = Gate(d, rng) if dual else None
        self.classifier = Linear(d, n_classes, rng)

    def __call__(self, e: Tensor, r: Tensor | None) -> Tensor:
        x = e if self.gate is None else self.gate(e, r)
        return self.classifier(x)


def _standardize(train: np.ndarray, test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = train.mean(axis=0)
    sd = train.std(axis=0) + 1e-8
    return (train - mu) / sd, (test - mu) / sd


def probe_train(representations, labels, hp: ProbeHyperparams | None = None) -> float:
    """Held-out accuracy of a linear softmax classifier.

    ``representations`` is an ``[n, d]`` array, or an ``(e, r)`` pair of
    pooled encoder vectors that a gate (trained jointly) combines first.
    """
    hp = hp or ProbeHyperparams()
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("probe labels contain a single class")
    y = np.searchsorted(classes, labels)
    dual = isinstance(representations, tuple)
    e = np.asarray(representations[0] if dual else representations, dtype=np.float64)
    r = np.asarray(representations[1], dtype=np.float64) if dual else None
    n = len(y)
    rng = np.random.default_rng(hp.seed)
    order = rng.permutation(n)
    cut = int(round(hp.train_fraction * n))
    tr, te = order[:cut], order[cut:]
    e_tr, e_te = _standardize(e[tr], e[te])
    r_tr, r_te = _standardize(r[tr], r[te]) if dual else (None, None)

    with default_dtype(np.float64):
        probe = _Probe(e.shape[1], classes.size, dual, rng)
        opt = Adam(probe.parameters(), beta1=0.9, beta2=0.999, eps=1e-8)
        ex, rx = Tensor(e_tr), (Tensor(r_tr) if dual else None)
        prev = np.inf
        for _ in range(hp.steps):
            opt.zero_grad()
            loss = T.cross_entropy(probe(ex, rx), y[tr], pad_id=None)
            w = probe.classifier.weight
            loss = T.add(loss, T.scale(T.sum(T.mul(w, w)), hp.l2))
            loss.backward()
            opt.step(hp.lr)
            if abs(prev - loss.item()) < hp.tol:
                break
            prev = loss.item()
        with no_grad():
            pred = probe(Tensor(e_te), Tensor(r_te) if dual else None).data.argmax(axis=-1)
    return float((pred == y[te]).mean())


@dataclass
class ProbeRow:
    task: str
    model_config_id: str
    accuracy: float
    n_train: int
    n_test: int
    seed: int


def probe_model(model: Seq2Seq, model_id: str, tasks: Sequence[ProbeTask],
                hp: ProbeHyperparams | None = None) -> list[ProbeRow]:
    hp = hp or ProbeHyperparams()
    rows = []
    for task in tasks:
        seqs, labels = gen_probe(task)
        e, r = pooled_states(model, seqs)
        reps = e if r is None else (e, r)
        acc = probe_train(reps, labels, hp)
        n_train = int(round(hp.train_fraction * len(labels)))
        rows.append(ProbeRow(task.kind, model_id, acc, n_train, len(labels) - n_train, task.seed))
    return rows


def saturation_gap(model: Seq2Seq, src, logit: float = 20.0) -> float:
    """Max |gated representation - Transformer pooled vector| with the gate pinned open."""
    e, r = pooled_states(model, src)
    if r is None:
        return 0.0
    with default_dtype(e.dtype):
        gate = Gate(model.cfg.d_model, np.random.default_rng(0))
        gate.proj.weight.data[:] = 0.0
        gate.proj.bias.data[:] = logit
    mixed = sentence_repr(model, src, gate).data
    return float(np.abs(mixed - e).max())


def write_probe_csv(rows: Sequence[ProbeRow], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PROBE_HEADER)
        for row in rows:
            d = asdict(row)
            w.writerow([d["task"], d["model_config_id"], f"{d['accuracy']:.6g}", d["n_train"], d["n_test"], d["seed"]])
    return path


def format_probe_table(rows: Sequence[ProbeRow]) -> str:
    """Model x task accuracy grid (percent)."""
    tasks = list(dict.fromkeys(r.task for r in rows))
    models = list(dict.fromkeys(r.model_config_id for r in rows))
    acc = {(r.model_config_id, r.task): r.accuracy for r in rows}
    width = max([len(m) for m in models] + [5])
    lines = [f"{'model':<{width}} | " + " | ".join(f"{t:>6}" for t in tasks)]
    lines.append("-" * len(lines[0]))
    for m in models:
        cells = [f"{100 * acc[(m, t)]:6.2f}" if (m, t) in acc else f"{'':>6}" for t in tasks]
        lines.append(f"{m:<{width}} | " + " | ".join(cells))
    return "\n".join(lines)
