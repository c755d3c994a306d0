import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from recurformer.config import ModelConfig  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """Small enough for finite-difference checks over every parameter."""
    return ModelConfig(vocab_size=16, d_model=8, n_heads=2, d_ff=16, n_enc_layers=1, n_dec_layers=2,
                       max_len=32, rec_steps=3)


@pytest.fixture
def tiny_batch():
    src = np.array([[5, 6, 7, 8, 0], [9, 4, 11, 0, 0]])
    tgt_in = np.array([[1, 5, 6, 7, 8], [1, 9, 4, 11, 0]])
    tgt_out = np.array([[5, 6, 7, 8, 2], [9, 4, 11, 2, 0]])
    return src, tgt_in, tgt_out


# -- acceptance reporting ------------------------------------------------------

_RESULTS = pytest.StashKey[list]()


class _Criterion:
    def __init__(self, results: list, name: str):
        self.results, self.name, self.detail = results, name, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        detail = self.detail if ok else f"{self.detail} {exc_type.__name__}: {exc}".strip()
        self.results.append((self.name, ok, detail.splitlines()[0] if detail else ""))
        return False


@pytest.fixture
def criterion(request):
    """``with criterion("name") as c: ...`` records one PASS/FAIL line for the summary."""
    results = request.config.stash.setdefault(_RESULTS, [])
    return lambda name: _Criterion(results, name)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in results:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
