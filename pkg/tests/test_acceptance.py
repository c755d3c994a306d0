"""Acceptance gate: one test per headline criterion.

Each test records a PASS/FAIL line that is printed in the "acceptance
criteria" section of the pytest summary.  Run alone with

    pytest tests/test_acceptance.py
"""

import csv
import time

import numpy as np
import pytest

from recurformer import tensor as T
from recurformer.ablation import STEP_SWEEP
from recurformer.bleu import corpus_bleu
from recurformer.cli import EXIT_OK, main
from recurformer.config import ModelConfig
from recurformer.gradcheck import grad_check
from recurformer.integration import GatedSumLayer
from recurformer.model import Seq2Seq
from recurformer.recurrence import ARN, RecEncoderOutput, RecurrenceEncoder
from recurformer.tasks import TaskSpec
from recurformer.tensor import Tensor
from recurformer.training import TrainHyperparams, greedy_decode, train
from recurformer.transformer import DecoderLayerBase, EncoderState, TransformerEncoder

from oracles import gru_encoder_ref, gru_params_of

GC_CFG = ModelConfig(vocab_size=12, d_model=8, n_heads=2, d_ff=8, n_enc_layers=1, n_dec_layers=2,
                     rec_layers=2, rec_steps=3, max_len=16)
GC_VARIANTS = [dict()] + [dict(recurrence=r, integration=i, feed_target=f)
                          for r in ("birnn", "arn", "biarn")
                          for i in ("gated_sum", "stack") for f in ("top", "all")]


def test_gradient_integrity(criterion):
    src = np.array([[5, 6, 7, 0], [8, 9, 4, 10]])
    tin = np.array([[1, 5, 6, 7], [1, 8, 9, 4]])
    tout = np.array([[5, 6, 7, 2], [8, 9, 4, 10]])
    with criterion("gradient integrity: every variant, rel err < 1e-4, eps 1e-4, float64, < 5 min") as c:
        t0 = time.perf_counter()
        worst, failed = 0.0, []
        for kw in GC_VARIANTS:
            model = Seq2Seq(GC_CFG.replace(**kw), dtype=np.float64)
            rep = grad_check(lambda: model.loss(src, tin, tout), list(model.named_parameters()),
                             eps=1e-4, tol=1e-4, n_samples=8)
            worst = max(worst, rep.max_rel_err)
            if not rep.passed:
                failed.append(model.cfg.label())
        elapsed = time.perf_counter() - t0
        c.detail = f"{len(GC_VARIANTS)} variants, max rel err {worst:.2e}, {elapsed:.0f} s"
        assert not failed, f"failing variants {failed}"
        assert elapsed < 300


def test_arn_reduces_to_rnn(criterion):
    with criterion("ARN -> RNN: step-aligned attention, T=J, 10 seeds, J in {1,5,12}, max-abs < 1e-6") as c:
        worst = 0.0
        for J in (1, 5, 12):
            for seed in range(10):
                rng = np.random.default_rng(seed)
                with T.default_dtype(np.float64):
                    arn = ARN(8, 8, J, rng)
                x = rng.normal(size=(1, J, 8))
                out = arn.sequence(Tensor(x), step_mask=np.eye(J, dtype=bool)).data[0]
                ref = gru_encoder_ref(x[0], gru_params_of(arn.cell), x[0].mean(0))
                worst = max(worst, float(np.abs(out - ref).max()))
        c.detail = f"max-abs {worst:.1e}"
        assert worst < 1e-6


def test_equivariance_contrast(criterion):
    with criterion("equivariance: PE-free SAN < 1e-6; BiRNN and BiARN > 1e-3 on the same inputs") as c:
        rng = np.random.default_rng(0)
        J = 7
        cfg = ModelConfig(d_model=16, n_heads=4, d_ff=32, n_enc_layers=2, positional_encoding=False, rec_steps=J)
        x = rng.normal(size=(1, J, 16))
        perm = rng.permutation(J)
        pad = np.zeros((1, J), dtype=bool)
        with T.default_dtype(np.float64):
            san = TransformerEncoder(cfg, rng)
            rnn = RecurrenceEncoder(cfg.replace(recurrence="birnn"), rng)
            arn = RecurrenceEncoder(cfg.replace(recurrence="biarn"), rng)

        def defect(f):
            return float(np.abs(f(x)[:, perm] - f(x[:, perm])).max())

        d_san = defect(lambda v: san(Tensor(v), pad).states.data)
        d_rnn = defect(lambda v: rnn(Tensor(v), pad).states.data)
        d_arn = defect(lambda v: arn(Tensor(v), pad).states.data)
        c.detail = f"SAN {d_san:.1e}, BiRNN {d_rnn:.1e}, BiARN {d_arn:.1e}"
        assert d_san < 1e-6 and d_rnn > 1e-3 and d_arn > 1e-3


def test_shape_laws(criterion):
    with criterion("shape laws: ARN/BiARN length T for J in 1..max_len; legal bottom layer with J != T") as c:
        rng = np.random.default_rng(0)
        cfg = ModelConfig(d_model=8, n_heads=2, d_ff=16, max_len=64, rec_steps=4)
        encs = {r: RecurrenceEncoder(cfg.replace(recurrence=r), rng) for r in ("arn", "biarn", "birnn")}
        for J in range(1, cfg.max_len + 1):
            x = Tensor(rng.normal(size=(2, J, 8)).astype(np.float32))
            pad = np.zeros((2, J), dtype=bool)
            assert encs["arn"](x, pad).states.shape == (2, 4, 8)
            assert encs["biarn"](x, pad).states.shape == (2, 4, 8)
            assert encs["birnn"](x, pad).states.shape == (2, J, 8)
        deep = RecurrenceEncoder(cfg.replace(recurrence="biarn", rec_layers=2), rng)
        out = deep(Tensor(rng.normal(size=(1, 9, 8)).astype(np.float32)), np.zeros((1, 9), bool))
        assert out.states.shape == (1, 4, 8)
        c.detail = f"J = 1..{cfg.max_len}; 2-layer biarn J=9 -> T=4"


def test_gate_properties(criterion):
    with criterion("gate: lambda in (0,1); saturated gated_sum equals base layer within 1e-4 at logit 20") as c:
        rng = np.random.default_rng(0)
        cfg = ModelConfig(d_model=16, n_heads=4, d_ff=32, recurrence="biarn", integration="gated_sum")
        with T.default_dtype(np.float64):
            layer = GatedSumLayer(cfg, rng)
            base = DecoderLayerBase(cfg, rng)
        base.load_state_dict(layer.state_dict(), strict=False)
        h = Tensor(rng.normal(size=(3, 5, 16)))
        enc = EncoderState(Tensor(rng.normal(size=(3, 6, 16))), np.zeros((3, 6), bool))
        rec = RecEncoderOutput(Tensor(rng.normal(size=(3, 4, 16))), np.zeros((3, 4), bool))
        layer.gate.proj.weight.data *= 4
        layer(h, enc, rec)
        lam = layer.gate.last_value
        assert np.all((lam > 0) & (lam < 1))
        layer.gate.proj.weight.data[:] = 0
        layer.gate.proj.bias.data[:] = 20.0
        gap = float(np.abs(layer(h, enc, rec).data - base(h, enc).data).max())
        c.detail = f"lambda range [{lam.min():.2e}, {lam.max():.6f}], saturation gap {gap:.1e}"
        assert gap < 1e-4


def _converges(cfg: ModelConfig, seed: int):
    model = Seq2Seq(cfg.replace(seed=seed))
    hp = TrainHyperparams(steps=3000, target_seq_acc=0.99)
    t0 = time.perf_counter()
    last = None
    for last in train(model, TaskSpec("copy", vocab_size=32, len_min=3, len_max=10, n_train=5000, seed=seed), hp):
        pass
    return last.seq_acc >= 0.99, last.step, last.seq_acc, time.perf_counter() - t0, model


@pytest.mark.slow
@pytest.mark.parametrize("name,cfg", [("baseline", ModelConfig()),
                                      ("BiARN 1-layer stack top", ModelConfig(recurrence="biarn", rec_layers=1,
                                                                              integration="stack",
                                                                              feed_target="top"))])
def test_convergence(criterion, name, cfg):
    with criterion(f"convergence ({name}): >= 99% exact match on copy within 3k steps, >= 4/5 seeds") as c:
        results = [_converges(cfg, s) for s in range(5)]
        ok = sum(r[0] for r in results)
        slowest = max(r[3] for r in results)
        steps = ",".join(str(r[1]) for r in results)
        c.detail = f"{ok}/5 seeds, steps {steps}, slowest run {slowest:.0f} s"
        assert ok >= 4
        assert slowest < 15 * 60
        model = next(r[4] for r in results if r[0])
        assert greedy_decode(model, [[5, 7, 9]]) == [[5, 7, 9]]


GRID = """\
preset=standard
d_model=16
n_heads=2
d_ff=32
n_train=200
n_eval=20
eval_size=20
steps=20
eval_every=20
batch_size=16
"""


def test_ablation_structure(criterion, tmp_path):
    with criterion("ablation: depth, integration x feed target and T sweep rows with steps/s; annotated") as c:
        grid = tmp_path / "grid.txt"
        grid.write_text(GRID)
        assert main(["ablate", "--config", str(grid), "--out", str(tmp_path)]) == EXIT_OK
        run = next(tmp_path.glob("ablate-*"))
        with open(run / "ablation.csv") as fh:
            rows = list(csv.DictReader(fh))
        with open(run / "cells.csv") as fh:
            cells = list(csv.DictReader(fh))
        by_group = {}
        for cell in cells:
            by_group.setdefault(cell["group"], []).append(cell)
        depths = [int(x["rec_layers"]) for x in by_group["recurrence"] if x["recurrence"] == "biarn"]
        assert {x["recurrence"] for x in by_group["recurrence"]} == {"none", "birnn", "biarn"}
        assert len(depths) == 3 and sorted(depths) == [1, 2, 3]
        assert {(x["integration"], x["feed_target"]) for x in by_group["integration"]} == {
            ("gated_sum", "top"), ("gated_sum", "all"), ("stack", "top"), ("stack", "all")}
        assert [int(x["rec_steps"]) for x in by_group["steps"]] == [1, 2, 4, 8, 10]
        assert len(by_group["steps"]) == len(STEP_SWEEP)
        cell_ids = {x["config_id"] for x in cells}
        assert {r["config_id"] for r in rows} == cell_ids
        assert all(float(r["steps_per_sec"]) > 0 for r in rows)
        report = (run / "report.md").read_text()
        assert "steps/s" in report and "short-cut check:" in report
        note = next(line for line in report.splitlines() if line.startswith("short-cut check:"))
        c.detail = f"{len(cells)} cells, {len(rows)} trained configs; {note}"


def test_bleu(criterion):
    with criterion("BLEU: 1.0 on identical corpora; hand-counted 4-gram example exact") as c:
        refs = [[5, 6, 7, 8, 9, 10], [4, 5, 6, 7]]
        assert corpus_bleu(refs, refs) == 1.0
        hyp, ref = "a a b c".split(), "a b c d".split()
        assert corpus_bleu([hyp], [ref]) == 0.0
        three = corpus_bleu([hyp], [ref], max_n=3)
        assert abs(three - (3 / 4 * 2 / 3 * 1 / 2) ** (1 / 3)) < 1e-12
        c.detail = f"identical 1.0; 'a a b c' vs 'a b c d': BLEU-4 0, BLEU-3 {three:.6f}"


PROBE_RUN = """\
task=sort
recurrence=biarn
integration=stack
steps=1000
eval_every=500
probe_examples=600
"""


@pytest.mark.slow
def test_probing_pipeline(criterion, tmp_path, capsys):
    with criterion("probing: trained sort models, selen > chance + 0.15 for both; saturation; task x model grid") as c:
        cfg = tmp_path / "probe.txt"
        cfg.write_text(PROBE_RUN)
        assert main(["probe", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
        out = capsys.readouterr().out
        run = next(tmp_path.glob("probe-*"))
        with open(run / "probe.csv") as fh:
            rows = list(csv.DictReader(fh))
        acc = {(r["model_config_id"], r["task"]): float(r["accuracy"]) for r in rows}
        trained = sorted({m for m, _ in acc if m.endswith("@trained")})
        assert len(trained) == 2 and "baseline@trained" in trained
        assert {(m, t) for m in trained for t in ("selen", "wc", "bshif")} <= set(acc)
        chance = 1 / 4
        selen = {m: acc[(m, "selen")] for m in trained}
        assert all(v > chance + 0.15 for v in selen.values()), selen
        assert "gate-saturation gap" in out and "FAILED" not in out
        c.detail = ", ".join(f"{m} selen {v:.3f}" for m, v in selen.items())
