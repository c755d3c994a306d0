"""Command-line entry point: ``train``, ``eval``, ``gradcheck``, ``ablate``, ``probe``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from pathlib import Path

import numpy as np

from . import runconfig
from .ablation import parse_grid, run_ablation_grid, write_metrics_csv
from .checkpoint import CheckpointError, init_from_baseline, load_checkpoint, save_checkpoint
from .config import ConfigError, ContractError
from .gradcheck import GradCheckError, grad_check
from .model import Seq2Seq
from .probing import (ProbeHyperparams, ProbeTask, format_probe_table, probe_model, saturation_gap,
                      write_probe_csv)
from .tasks import TaskSpec, gen_task, make_batch
from .training import NonFiniteLossError, evaluate, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


def _out_dir(root: str, command: str) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    base = Path(root) / f"{command}-{stamp}"
    path, n = base, 1
    while path.exists():
        path = Path(f"{base}-{n}")
        n += 1
    path.mkdir(parents=True)
    return path


def _load_config(args) -> runconfig.RunConfig:
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    rc = runconfig.load(path)
    if args.seed is not None:
        rc = rc.with_seed(args.seed)
    return rc


def _dtype(args):
    return np.float64 if args.precision == "double" else np.float32


def _prepare(args, command: str):
    rc = _load_config(args)
    out = _out_dir(args.out or rc.run.out_dir, command)
    (out / "config.txt").write_text(rc.dumps())
    return rc, out


def cmd_train(args) -> int:
    rc, out = _prepare(args, "train")
    model = Seq2Seq(rc.model, dtype=_dtype(args))
    if rc.run.init_from:
        loaded = init_from_baseline(model, rc.run.init_from)
        print(f"initialized {len(loaded)} tensors from {rc.run.init_from}")
    rows = []
    metrics_path = out / "metrics.csv"
    write_metrics_csv([], metrics_path)
    for row in train(model, rc.task, rc.train, config_id=rc.model.label(), seed=rc.model.seed):
        rows.append(row)
        write_metrics_csv([row], metrics_path, append=True)
        print(f"step {row.step:>6}  loss {row.loss:.4f}  tok {row.token_acc:.4f}  "
              f"seq {row.seq_acc:.4f}  bleu {row.bleu:.4f}  {row.steps_per_sec:.1f} steps/s")
    save_checkpoint(model, out / "model.ckpt", extra={"steps": rows[-1].step if rows else 0})
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    rc, out = _prepare(args, "eval")
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint")
    model = load_checkpoint(args.checkpoint)
    _, eval_pairs = gen_task(rc.task)
    m = evaluate(model, eval_pairs)
    result = {k: m[k] for k in ("token_acc", "seq_acc", "bleu")}
    (out / "eval.json").write_text(json.dumps(result, indent=2))
    print(json.dumps(result))
    return EXIT_OK


def _gradcheck_batch(task: TaskSpec, n: int):
    train_pairs, _ = gen_task(TaskSpec(task.kind, task.vocab_size, task.len_min,
                                       min(task.len_max, task.len_min + 3), max(n, 1), 0, task.seed))
    return make_batch(train_pairs[:n])


def cmd_gradcheck(args) -> int:
    rc, out = _prepare(args, "gradcheck")
    model = Seq2Seq(rc.model, dtype=np.float64)
    model.eval()  # dropout off
    batch = _gradcheck_batch(rc.task, rc.run.gc_batch)
    hook = None
    if args.inject_grad_fault:
        def hook(name, g):
            return g * 1.5 + 1e-3
    report = grad_check(lambda: model.loss(batch.src_ids, batch.tgt_in, batch.tgt_out),
                        list(model.named_parameters()), eps=rc.run.gc_eps, tol=rc.run.gc_tol,
                        n_samples=rc.run.gc_samples, seed=rc.model.seed, grad_hook=hook)
    table = report.format_table()
    (out / "gradcheck.txt").write_text(table + "\n")
    print(f"variant {rc.model.label()}")
    print(table)
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_ablate(args) -> int:
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"grid file not found: {path}")
    grid = parse_grid(path.read_text(), str(path))
    if args.seed is not None:
        grid.seeds = (args.seed,)
    out = _out_dir(args.out or grid.base.run.out_dir, "ablate")
    (out / "grid.txt").write_text(path.read_text())
    (out / "config.txt").write_text(grid.base.dumps())
    run_ablation_grid(grid, out, log=print)
    print((out / "report.md").read_text())
    print(f"wrote {out}")
    return EXIT_OK


def cmd_probe(args) -> int:
    rc, out = _prepare(args, "probe")
    if rc.task.kind != "sort":
        print(f"note: probing a {rc.task.kind}-task model")
    dual_cfg = rc.model if rc.model.has_recurrence else rc.model.replace(recurrence="biarn", integration="stack")
    families = {"baseline": rc.model.replace(recurrence="none", integration=None), dual_cfg.label(): dual_cfg}
    tasks = [ProbeTask(kind, rc.run.probe_examples, rc.model.seed, rc.task.vocab_size,
                       max(rc.task.len_min, 2), rc.task.len_max) for kind in rc.run.probe_tasks]
    hp = ProbeHyperparams(seed=rc.model.seed)
    rows = []
    for name, cfg in families.items():
        model = Seq2Seq(cfg, dtype=_dtype(args))
        rows += probe_model(model, f"{name}@init", tasks, hp)
        if rc.train.steps > 0:
            for _ in train(model, rc.task, rc.train, config_id=name, seed=cfg.seed):
                pass
            save_checkpoint(model, out / f"{name}.ckpt")
            rows += probe_model(model, f"{name}@trained", tasks, hp)
        if cfg.has_recurrence:
            gap = saturation_gap(model, [[5, 6, 7], [8, 9, 10, 11]])
            print(f"{name}: gate-saturation gap {gap:.2e} ({'ok' if gap < 1e-6 else 'FAILED'})")
    write_probe_csv(rows, out / "probe.csv")
    print(format_probe_table(rows))
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
            "ablate": cmd_ablate, "probe": cmd_probe}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recurformer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key=value config (grid file for ablate)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output root; a fresh timestamped directory is made inside")
        p.add_argument("--precision", choices=("single", "double"), default="single")
        if name == "eval":
            p.add_argument("--checkpoint", required=True)
        if name == "gradcheck":
            p.add_argument("--inject-grad-fault", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, CheckpointError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteLossError, GradCheckError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
