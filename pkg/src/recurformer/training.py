"""Teacher-forced training, greedy decoding and evaluation metrics."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, fields
from typing import Iterator, Sequence

import numpy as np

from .bleu import corpus_bleu
from .config import BOS_ID, EOS_ID, PAD_ID
from .model import Seq2Seq
from .tasks import Pair, TaskSpec, gen_task, iterate_batches, make_batch, pad_sequences
from .tensor import Parameter, no_grad

METRICS_HEADER = ("config_id", "seed", "step", "loss", "token_acc", "seq_acc", "bleu", "steps_per_sec")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass
class TrainHyperparams:
    steps: int = 3000
    batch_size: int = 32
    warmup: int = 400
    lr_scale: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    eval_every: int = 250
    eval_size: int = 200
    # stop once greedy exact-match on the eval set reaches this value
    target_seq_acc: float | None = None


@dataclass
class MetricsRow:
    config_id: str
    seed: int
    step: int
    loss: float
    token_acc: float
    seq_acc: float
    bleu: float
    steps_per_sec: float

    def as_dict(self) -> dict:
        return asdict(self)

    def csv_fields(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{v:.6g}" if isinstance(v, float) else str(v))
        return out


def noam_lr(step: int, d_model: int, warmup: int, scale: float = 1.0) -> float:
    """Linear warmup for ``warmup`` steps, then inverse square-root decay."""
    step = max(step, 1)
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


class Adam:
    def __init__(self, params: Sequence[Parameter], beta1=0.9, beta2=0.98, eps=1e-9):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data = p.data - update.astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def train_step(model: Seq2Seq, opt: Adam, batch, lr: float) -> float:
    model.train()
    opt.zero_grad()
    loss = model.loss(batch.src_ids, batch.tgt_in, batch.tgt_out)
    value = loss.item()
    if not np.isfinite(value):
        raise NonFiniteLossError(opt.t + 1, value)
    loss.backward()
    opt.step(lr)
    return value


def greedy_decode(model: Seq2Seq, src: np.ndarray | Sequence[Sequence[int]], max_len: int | None = None,
                  return_logits: bool = False):
    """Argmax decoding until EOS or ``max_len`` tokens, batched over rows of ``src``.

    Returns one token list per source row (EOS stripped).  With
    ``return_logits`` the per-step last-position logits are returned too.
    """
    if not isinstance(src, np.ndarray):
        src = pad_sequences(src)
    src = np.asarray(src)
    if max_len is None:
        max_len = src.shape[1] + 2
    was_training = model.training
    model.eval()
    b = src.shape[0]
    steps_logits = []
    with no_grad():
        enc, rec = model.encode(src)
        prefix = np.full((b, 1), BOS_ID, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        for _ in range(max_len):
            logits = model.decode(prefix, enc, rec).data[:, -1, :]
            steps_logits.append(logits)
            nxt = logits.argmax(axis=-1)
            nxt = np.where(done, PAD_ID, nxt)
            prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
            done |= nxt == EOS_ID
            if done.all():
                break
    model.train(was_training)
    out = []
    for row in prefix[:, 1:]:
        toks = []
        for t in row:
            if t in (EOS_ID, PAD_ID):
                break
            toks.append(int(t))
        out.append(toks)
    if return_logits:
        return out, np.stack(steps_logits, axis=1)
    return out


def teacher_forced_accuracy(model: Seq2Seq, pairs: Sequence[Pair], batch_size: int = 256) -> float:
    was_training = model.training
    model.eval()
    correct = total = 0
    with no_grad():
        for i in range(0, len(pairs), batch_size):
            batch = make_batch(pairs[i:i + batch_size])
            pred = model(batch.src_ids, batch.tgt_in).data.argmax(axis=-1)
            keep = ~batch.tgt_pad_mask
            correct += int(((pred == batch.tgt_out) & keep).sum())
            total += int(keep.sum())
    model.train(was_training)
    return correct / max(total, 1)


def evaluate(model: Seq2Seq, pairs: Sequence[Pair], batch_size: int = 256) -> dict:
    """Teacher-forced token accuracy plus greedy exact-match and corpus BLEU."""
    hyps = []
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i:i + batch_size]
        longest = max(len(t) for _, t in chunk)
        hyps.extend(greedy_decode(model, [s for s, _ in chunk], max_len=longest + 2))
    refs = [list(t) for _, t in pairs]
    seq_acc = float(np.mean([h == r for h, r in zip(hyps, refs)]))
    return {
        "token_acc": teacher_forced_accuracy(model, pairs, batch_size),
        "seq_acc": seq_acc,
        "bleu": corpus_bleu(hyps, refs),
        "hypotheses": hyps,
    }


def train(model: Seq2Seq, task: TaskSpec | tuple[list[Pair], list[Pair]], hp: TrainHyperparams,
          config_id: str | None = None, seed: int | None = None) -> Iterator[MetricsRow]:
    """Train ``model`` and yield a :class:`MetricsRow` every ``hp.eval_every`` steps.

    The final step always yields a row.  Loss in a row is the mean training
    loss since the previous row; ``steps_per_sec`` counts training work only.
    """
    train_pairs, eval_pairs = gen_task(task) if isinstance(task, TaskSpec) else task
    eval_pairs = eval_pairs[: hp.eval_size]
    seed = model.cfg.seed if seed is None else seed
    config_id = config_id or model.cfg.label()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    batches = iterate_batches(train_pairs, hp.batch_size, rng)
    opt = Adam(model.parameters(), hp.beta1, hp.beta2, hp.adam_eps)
    window: list[float] = []
    train_time = 0.0
    for step in range(1, hp.steps + 1):
        batch = next(batches)
        t0 = time.perf_counter()
        window.append(train_step(model, opt, batch, noam_lr(step, model.cfg.d_model, hp.warmup, hp.lr_scale)))
        train_time += time.perf_counter() - t0
        if step % hp.eval_every == 0 or step == hp.steps:
            metrics = evaluate(model, eval_pairs) if eval_pairs else {"token_acc": float("nan"),
                                                                     "seq_acc": float("nan"),
                                                                     "bleu": float("nan")}
            row = MetricsRow(config_id, seed, step, float(np.mean(window)), metrics["token_acc"],
                             metrics["seq_acc"], metrics["bleu"], step / train_time)
            window = []
            yield row
            if hp.target_seq_acc is not None and row.seq_acc >= hp.target_seq_acc:
                return
