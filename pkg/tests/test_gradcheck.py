import numpy as np
import pytest

from recurformer import tensor as T
from recurformer.gradcheck import GradCheckError, grad_check, relative_error
from recurformer.model import Seq2Seq
from recurformer.tensor import Parameter


def test_quadratic():
    x = Parameter(np.array([1.0, 2.0]), name="x")
    rep = grad_check(lambda: T.sum(T.mul(x, x)), [x], eps=1e-4)
    assert rep.passed
    assert rep.checks[0].max_rel_err < 1e-8
    T.sum(T.mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_casts_to_double_and_restores():
    x = Parameter(np.array([1.0, 2.0], dtype=np.float32), name="x")
    seen = []

    def loss():
        seen.append(x.dtype)
        return T.sum(T.mul(x, x))

    grad_check(loss, [x])
    assert set(seen) == {np.dtype(np.float64)}
    assert x.dtype == np.float32


def test_parameters_restored_exactly(rng):
    x = Parameter(rng.normal(size=(3, 3)), name="x")
    before = x.data.copy()
    grad_check(lambda: T.sum(T.tanh(x)), [x], n_samples=9)
    np.testing.assert_array_equal(x.data, before)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_names_parameter():
    x = Parameter(np.array([0.0, 1.0]), name="layer.weight")
    with pytest.raises(GradCheckError, match="layer.weight"):
        grad_check(lambda: T.sum(T.mul(x, Parameter(np.array([np.inf, 1.0]), name="c"))), [("layer.weight", x)])


def test_corrupted_gradient_is_caught():
    x = Parameter(np.array([1.0, -2.0, 0.5]), name="x")
    rep = grad_check(lambda: T.sum(T.tanh(x)), [x], grad_hook=lambda n, g: g * 1.01)
    assert not rep.passed
    assert rep.failures()[0].name == "x"


def test_kink_inside_probe_interval_is_refined():
    # relu(x - 5e-5) at x = 0 has gradient 0, but the eps=1e-4 difference straddles the kink
    x = Parameter(np.zeros(1), name="x")
    shift = Parameter(np.full(1, -5e-5), name="shift")
    rep = grad_check(lambda: T.sum(T.relu(T.add(x, shift))), [x])
    assert rep.passed and rep.checks[0].n_refined == 1


def test_refinement_does_not_hide_wrong_gradients():
    x = Parameter(np.zeros(1), name="x")
    shift = Parameter(np.full(1, -5e-5), name="shift")
    rep = grad_check(lambda: T.sum(T.relu(T.add(x, shift))), [x], grad_hook=lambda n, g: g + 0.01)
    assert not rep.passed


def test_relative_error_floor():
    assert relative_error(1e-12, 0.0) < 1e-5
    assert relative_error(1.0, 1.0 + 1e-6) == pytest.approx(1e-6, rel=1e-3)


@pytest.mark.parametrize("recurrence,integration", [("birnn", "gated_sum"), ("biarn", "stack")])
def test_single_layer_decoder_variants(tiny_cfg, tiny_batch, recurrence, integration):
    cfg = tiny_cfg.replace(n_dec_layers=1, recurrence=recurrence, integration=integration, rec_layers=1)
    model = Seq2Seq(cfg)
    src, tin, tout = tiny_batch
    rep = grad_check(lambda: model.loss(src[:, :3], tin[:, :3], tout[:, :3]), list(model.named_parameters()))
    assert rep.passed, rep.format_table()
