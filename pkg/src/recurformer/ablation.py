"""Ablation grids: recurrence depth, integration x feed target, recurrent-step sweep."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .config import ConfigError, ModelConfig
from .model import Seq2Seq
from .runconfig import RunConfig, build_run_config, parse_pairs
from .training import METRICS_HEADER, MetricsRow, train

GROUPS = ("recurrence", "integration", "steps")
STEP_SWEEP = (1, 2, 4, 8, "J")
REC_DEPTHS = (3, 2, 1)
CELLS_HEADER = ("group", "config_id", "recurrence", "rec_layers", "integration", "feed_target",
                "rec_steps", "n_params")


@dataclass
class GridCell:
    group: str
    config_id: str
    model: ModelConfig


@dataclass
class GridSpec:
    base: RunConfig
    cells: list[GridCell]
    seeds: tuple[int, ...] = (0,)

    def unique_configs(self) -> dict[str, ModelConfig]:
        out: dict[str, ModelConfig] = {}
        for c in self.cells:
            if c.config_id in out and out[c.config_id] != c.model:
                raise ConfigError("cell", f"config_id {c.config_id!r} names two different configs")
            out.setdefault(c.config_id, c.model)
        return out


def _steps_value(v, source_len: int) -> int:
    return source_len if v == "J" else int(v)


def standard_cells(base: ModelConfig, source_len: int, depths: Sequence[int] = REC_DEPTHS,
                   steps: Sequence = STEP_SWEEP) -> list[GridCell]:
    """The standard grid, one group per entry of ``GROUPS``.

    * recurrence: baseline, deepest BiRNN, BiARN at each depth (stack, top)
    * integration: 1-layer BiARN, {gated_sum, stack} x {top, all}
    * steps: 1-layer BiARN (stack, top) with T in ``steps`` ("J" = longest source)
    """
    cells = []
    plain = base.replace(recurrence="none", integration=None)
    cells.append(GridCell("recurrence", plain.label(), plain))
    birnn = base.replace(recurrence="birnn", rec_layers=max(depths), integration="stack", feed_target="top")
    cells.append(GridCell("recurrence", birnn.label(), birnn))
    for depth in depths:
        cfg = base.replace(recurrence="biarn", rec_layers=depth, integration="stack", feed_target="top")
        cells.append(GridCell("recurrence", cfg.label(), cfg))
    for integ in ("gated_sum", "stack"):
        for feed in ("top", "all"):
            cfg = base.replace(recurrence="biarn", rec_layers=1, integration=integ, feed_target=feed)
            cells.append(GridCell("integration", cfg.label(), cfg))
    for t in steps:
        cfg = base.replace(recurrence="biarn", rec_layers=1, integration="stack", feed_target="top",
                           rec_steps=_steps_value(t, source_len))
        cid = cfg.label() + ("(J)" if t == "J" else "")
        cells.append(GridCell("steps", cid, cfg))
    return cells


def parse_grid(text: str, source: str = "<grid>") -> GridSpec:
    """Parse a grid file.

    Plain ``key=value`` lines set the shared base run config.  Extra keys:
    ``seeds=0,1`` and ``preset=standard`` (adds :func:`standard_cells`);
    ``sweep_rec_steps=1,2,J`` adds a recurrent-step sweep over the base
    model.  ``cell <id> key=value ...`` lines add one explicit cell each.
    """
    plain, cell_lines = [], []
    for line in text.splitlines():
        stripped = line.split("#", 1)[0].strip()
        if stripped.startswith("cell "):
            cell_lines.append(stripped)
        else:
            plain.append(line)
    pairs = parse_pairs("\n".join(plain), source)
    seeds = tuple(int(s) for s in pairs.pop("seeds", "0").split(","))
    preset = pairs.pop("preset", None)
    sweep = pairs.pop("sweep_rec_steps", None)
    base = build_run_config(pairs)
    J = base.task.len_max
    cells: list[GridCell] = []
    if preset == "standard":
        cells.extend(standard_cells(base.model, J))
    elif preset is not None:
        raise ConfigError("preset", f"unknown preset {preset!r}")
    if sweep:
        for t in sweep.split(","):
            t = t.strip()
            cfg = base.model.replace(rec_steps=_steps_value(t, J))
            cells.append(GridCell("steps", cfg.label() + ("(J)" if t == "J" else ""), cfg))
    for line in cell_lines:
        parts = line.split()
        if len(parts) < 2:
            raise ConfigError("cell", f"{source}: cell line needs an id: {line!r}")
        cid = parts[1]
        kv = parse_pairs("\n".join(parts[2:]), f"{source}:cell {cid}")
        cfg = build_run_config(kv, base).model
        cells.append(GridCell("custom", cid, cfg))
    if not cells:
        raise ConfigError("cell", f"{source}: grid defines no cells")
    return GridSpec(base, cells, seeds)


def run_ablation_grid(grid: GridSpec, out_dir: str | Path | None = None, log=None) -> list[MetricsRow]:
    """Train every distinct cell config for every seed; one final row per (cell, seed).

    Each run uses identical data and seed so cells differ only in architecture.
    """
    rows: list[MetricsRow] = []
    configs = grid.unique_configs()
    n_params = {}
    for seed in grid.seeds:
        rc = grid.base.with_seed(seed)
        for cid, cfg in configs.items():
            model = Seq2Seq(cfg.replace(seed=seed))
            n_params[cid] = model.num_parameters()
            last = None
            for last in train(model, rc.task, rc.train, config_id=cid, seed=seed):
                pass
            rows.append(last)
            if log:
                log(f"{cid} seed={seed} loss={last.loss:.4f} seq_acc={last.seq_acc:.3f} "
                    f"steps/s={last.steps_per_sec:.1f}")
    if out_dir is not None:
        out = Path(out_dir)
        write_metrics_csv(rows, out / "ablation.csv")
        write_cells_csv(grid, n_params, out / "cells.csv")
        (out / "report.md").write_text(format_report(grid, rows))
    return rows


def write_metrics_csv(rows: Sequence[MetricsRow], path: str | Path, append: bool = False) -> Path:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow(r.csv_fields())
    return path


def write_cells_csv(grid: GridSpec, n_params: dict[str, int], path: Path) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CELLS_HEADER)
        for c in grid.cells:
            m = c.model
            w.writerow([c.group, c.config_id, m.recurrence, m.rec_layers if m.has_recurrence else 0,
                        m.resolved_integration or "n/a", m.feed_target if m.has_recurrence else "n/a",
                        m.rec_steps if m.recurrence in ("arn", "biarn") else "n/a", n_params.get(c.config_id, "")])
    return path


def _mean_by_config(rows: Sequence[MetricsRow]) -> dict[str, dict[str, float]]:
    acc: dict[str, list[MetricsRow]] = {}
    for r in rows:
        acc.setdefault(r.config_id, []).append(r)
    out = {}
    for cid, rs in acc.items():
        out[cid] = {k: sum(getattr(r, k) for r in rs) / len(rs)
                    for k in ("loss", "token_acc", "seq_acc", "bleu", "steps_per_sec")}
    return out


def shortcut_annotation(grid: GridSpec, rows: Sequence[MetricsRow]) -> str:
    """Whether the 1-layer, top-fed variant ranks first among recurrence variants (not asserted)."""
    means = _mean_by_config(rows)
    candidates = {c.config_id: c.model for c in grid.cells
                  if c.group in ("recurrence", "integration") and c.model.has_recurrence}
    if not candidates:
        return "short-cut check: no recurrence cells in this grid"
    # rank by BLEU, then exact match, then lower loss
    best = max(candidates, key=lambda cid: (means[cid]["bleu"], means[cid]["seq_acc"], -means[cid]["loss"]))
    m = candidates[best]
    shortcut = m.rec_layers == 1 and m.feed_target == "top"
    verdict = "matches" if shortcut else "does not match"
    return (f"short-cut check: best recurrence variant is {best}; this {verdict} the expectation "
            f"that a 1-layer recurrence encoder fed only to the top decoder layer ranks first.")


def format_report(grid: GridSpec, rows: Sequence[MetricsRow]) -> str:
    means = _mean_by_config(rows)
    lines = ["# Ablation report", "", f"seeds: {', '.join(map(str, grid.seeds))}", ""]
    titles = {"recurrence": "Recurrence encoder implementations", "integration": "Integration strategies",
              "steps": "Recurrent steps", "custom": "Custom cells"}
    for group in GROUPS + ("custom",):
        cells = [c for c in grid.cells if c.group == group]
        if not cells:
            continue
        lines += [f"## {titles[group]}", "",
                  "| config | steps/s | loss | token_acc | seq_acc | BLEU |", "|---|---|---|---|---|---|"]
        for c in cells:
            m = means.get(c.config_id)
            if m is None:
                continue
            lines.append(f"| {c.config_id} | {m['steps_per_sec']:.2f} | {m['loss']:.4f} | "
                         f"{m['token_acc']:.4f} | {m['seq_acc']:.4f} | {100 * m['bleu']:.2f} |")
        lines.append("")
    lines += [shortcut_annotation(grid, rows), ""]
    return "\n".join(lines)
