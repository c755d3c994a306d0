"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, default_dtype

# Denominator floor for the relative error, so that coordinates whose true
# gradient is ~0 are judged by absolute error instead.
REL_FLOOR = 1e-6
# A mismatching difference is re-estimated at eps/10, eps/100 while the
# estimates themselves keep moving (a ReLU kink inside the probe interval).
MAX_REFINE = 2


class GradCheckError(FloatingPointError):
    """The loss became non-finite while probing a parameter."""

    def __init__(self, name: str, message: str):
        super().__init__(f"{name}: {message}")
        self.name = name


@dataclass
class ParamCheck:
    name: str
    shape: tuple[int, ...]
    n_checked: int
    max_rel_err: float
    max_abs_err: float
    tol: float
    n_refined: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


@dataclass
class GradCheckReport:
    checks: list[ParamCheck] = field(default_factory=list)
    loss: float = float("nan")

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def max_rel_err(self) -> float:
        return max((c.max_rel_err for c in self.checks), default=0.0)

    def failures(self) -> list[ParamCheck]:
        return [c for c in self.checks if not c.passed]

    def format_table(self) -> str:
        width = max([len(c.name) for c in self.checks] + [9])
        lines = [f"{'parameter':<{width}}  {'shape':<14} {'n':>3}  {'max_rel_err':>11}  {'max_abs_err':>11}  "
                 f"refined  ok"]
        for c in self.checks:
            lines.append(f"{c.name:<{width}}  {str(c.shape):<14} {c.n_checked:>3}  "
                         f"{c.max_rel_err:11.3e}  {c.max_abs_err:11.3e}  {c.n_refined:>7}  "
                         f"{'yes' if c.passed else 'NO'}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} (max rel err {self.max_rel_err:.3e})")
        return "\n".join(lines)


def relative_error(a: float, b: float, floor: float = REL_FLOOR) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def _named(params) -> list[tuple[str, Parameter]]:
    out = []
    for i, p in enumerate(params):
        if isinstance(p, tuple):
            out.append(p)
        else:
            out.append((p.name or f"param{i}", p))
    return out


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence, eps: float = 1e-4, tol: float = 1e-4,
               n_samples: int = 6, seed: int = 0, double: bool = True, restore_dtype: bool = True,
               grad_hook: Callable[[str, np.ndarray], np.ndarray] | None = None) -> GradCheckReport:
    """Compare backprop gradients with ``(L(x+eps) - L(x-eps)) / (2 eps)``.

    ``params`` holds :class:`Parameter` objects or ``(name, Parameter)`` pairs.
    Up to ``n_samples`` coordinates per parameter are drawn with a seeded
    generator.  With ``double`` every parameter is cast to float64 (and the
    default dtype switched) for the duration of the check.  ``grad_hook`` may
    rewrite an analytic gradient before comparison (fault injection).

    When a coordinate mismatches, the difference is recomputed with a ten
    times smaller step; the finer value replaces the coarse one only if the
    two differences disagree with each other, i.e. the coarse step was not
    in the smooth regime.  A wrong analytic gradient still fails because its
    difference estimates agree among themselves.
    """
    named = _named(params)
    original = [p.dtype for _, p in named]
    rng = np.random.default_rng(seed)
    dtype = np.float64 if double else original[0] if original else np.float64
    try:
        if double:
            for _, p in named:
                p.data = p.data.astype(np.float64)
        with default_dtype(dtype):
            for _, p in named:
                p.grad = None
            loss = loss_fn()
            base = float(loss.data)
            if not np.isfinite(base):
                raise GradCheckError(named[0][0] if named else "<none>", f"non-finite loss {base}")
            loss.backward()
            analytic = {}
            for name, p in named:
                g = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                analytic[name] = grad_hook(name, g) if grad_hook else g

            report = GradCheckReport(loss=base)
            for name, p in named:
                flat = p.data.reshape(-1)
                k = min(n_samples, flat.size)
                coords = rng.choice(flat.size, size=k, replace=False)
                worst_rel = worst_abs = 0.0
                g = analytic[name].reshape(-1)
                refined = 0
                for c in coords:
                    def diff(h):
                        orig = flat[c]
                        flat[c] = orig + h
                        lp = float(loss_fn().data)
                        flat[c] = orig - h
                        lm = float(loss_fn().data)
                        flat[c] = orig
                        if not (np.isfinite(lp) and np.isfinite(lm)):
                            raise GradCheckError(name, f"non-finite loss while perturbing coordinate {int(c)}")
                        return (lp - lm) / (2 * h)

                    an = float(g[c])
                    h, fd = eps, diff(eps)
                    for _ in range(MAX_REFINE):
                        if relative_error(an, fd) < tol:
                            break
                        finer = diff(h / 10)
                        if relative_error(fd, finer) < tol:
                            break
                        h, fd = h / 10, finer
                        refined += 1
                    worst_rel = max(worst_rel, relative_error(an, fd))
                    worst_abs = max(worst_abs, abs(an - fd))
                report.checks.append(ParamCheck(name, p.shape, k, worst_rel, worst_abs, tol, refined))
            for _, p in named:
                p.grad = None
    finally:
        if double and restore_dtype:
            for (_, p), dt in zip(named, original):
                p.data = p.data.astype(dt)
    return report
