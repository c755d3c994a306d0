"""Flat ``key=value`` run configuration files.

One key per line; ``#`` starts a comment.  Keys are the union of the model,
task, training and run fields below; ``seed`` and ``vocab_size`` feed both
the model and the task.  Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .config import ConfigError, ModelConfig
from .tasks import TaskSpec
from .training import TrainHyperparams

# TaskSpec.kind is spelled ``task`` in files
_TASK_KEYS = {"task": "kind", "len_min": "len_min", "len_max": "len_max", "n_train": "n_train",
              "n_eval": "n_eval", "vocab_size": "vocab_size", "seed": "seed"}
_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainHyperparams)}


@dataclass
class RunOptions:
    out_dir: str = "runs"
    init_from: str | None = None
    probe_tasks: tuple[str, ...] = ("selen", "wc", "bshif")
    probe_examples: int = 600
    gc_eps: float = 1e-4
    gc_tol: float = 1e-4
    gc_samples: int = 4
    gc_batch: int = 2


_RUN_KEYS = {f.name for f in fields(RunOptions)}
KNOWN_KEYS = _MODEL_KEYS | set(_TASK_KEYS) | _TRAIN_KEYS | _RUN_KEYS


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    task: TaskSpec = field(default_factory=TaskSpec)
    train: TrainHyperparams = field(default_factory=TrainHyperparams)
    run: RunOptions = field(default_factory=RunOptions)

    def with_seed(self, seed: int) -> "RunConfig":
        return RunConfig(self.model.replace(seed=seed), dataclasses.replace(self.task, seed=seed),
                         self.train, self.run)

    def to_flat(self) -> dict:
        flat = {}
        flat.update(self.model.to_dict())
        flat.update({k: getattr(self.task, v) for k, v in _TASK_KEYS.items()})
        flat.update(dataclasses.asdict(self.train))
        flat.update(dataclasses.asdict(self.run))
        return flat

    def dumps(self) -> str:
        lines = []
        for k, v in self.to_flat().items():
            if v is None:
                v = "none"
            elif isinstance(v, (tuple, list)):
                v = ",".join(map(str, v))
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"


def _field_types(cls) -> dict:
    return typing.get_type_hints(cls)


def _convert(key: str, raw: str, hint):
    raw = raw.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if raw.lower() in ("none", "null", ""):
            if type(None) in args:
                return None
        hint = next(a for a in args if a is not type(None))
        origin = typing.get_origin(hint)
        args = typing.get_args(hint)
    try:
        if hint is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if origin is tuple:
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") from None


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"{source}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(key, f"{source}: duplicate key")
        pairs[key] = value
    return pairs


def build_run_config(pairs: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    unknown = [k for k in pairs if k not in KNOWN_KEYS]
    if unknown:
        raise ConfigError(unknown[0], "unknown config key")
    base = base or RunConfig()
    m_types, t_types = _field_types(ModelConfig), _field_types(TaskSpec)
    tr_types, r_types = _field_types(TrainHyperparams), _field_types(RunOptions)
    model_kw, task_kw, train_kw, run_kw = {}, {}, {}, {}
    for key, raw in pairs.items():
        if key in _MODEL_KEYS:
            model_kw[key] = _convert(key, raw, m_types[key])
        if key in _TASK_KEYS:
            name = _TASK_KEYS[key]
            task_kw[name] = _convert(key, raw, t_types[name])
        if key in _TRAIN_KEYS:
            train_kw[key] = _convert(key, raw, tr_types[key])
        if key in _RUN_KEYS:
            run_kw[key] = _convert(key, raw, r_types[key])
    return RunConfig(
        model=base.model.replace(**model_kw),
        task=dataclasses.replace(base.task, **task_kw),
        train=dataclasses.replace(base.train, **train_kw),
        run=dataclasses.replace(base.run, **run_kw),
    )


def loads(text: str, source: str = "<config>") -> RunConfig:
    return build_run_config(parse_pairs(text, source))


def load(path: str | Path) -> RunConfig:
    path = Path(path)
    return loads(path.read_text(), str(path))
