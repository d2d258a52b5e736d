import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ode2vae.autodiff import (
    PRIMITIVES,
    ShapeError,
    Tape,
    Tensor,
    backprop,
    concat,
    grad_check,
    precision,
    record_primitive,
)


def test_matmul_hand_example():
    out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[1.0], [1.0]])
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_tanh_at_zero():
    tape = Tape()
    x = tape.variable(0.0)
    y = x.tanh()
    assert y.data == 0.0
    assert backprop(tape, y)[x.node] == 1.0


def test_concat_shape():
    out = concat([Tensor(np.zeros((2, 3))), Tensor(np.ones((2, 5)))], axis=1)
    assert out.shape == (2, 8)


def test_shape_error_names_primitive_and_shapes():
    with pytest.raises(ShapeError) as exc:
        Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))
    assert exc.value.primitive == "matmul"
    assert exc.value.shapes == ((2, 3), (2, 3))
    with pytest.raises(ShapeError, match="add"):
        Tensor(np.zeros(3)) + Tensor(np.zeros(4))
    with pytest.raises(ShapeError, match="concat"):
        concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))], axis=1)


def test_sum_of_squares_gradient():
    tape = Tape()
    x = tape.variable([1.0, 2.0, 3.0])
    grads = backprop(tape, (x * x).sum())
    np.testing.assert_array_equal(grads[x.node], [2.0, 4.0, 6.0])


def test_unused_leaf_gets_zero():
    tape = Tape()
    c = tape.variable([[5.0, 6.0]])
    x = tape.variable(2.0)
    grads = backprop(tape, x.square())
    np.testing.assert_array_equal(grads[c.node], np.zeros((1, 2)))


def test_tanh_of_dot_at_zero_weight():
    tape = Tape()
    xv = np.array([[0.3], [-1.2], [2.0]])
    w = tape.variable(np.zeros((1, 3)))
    loss = (w @ Tensor(xv)).tanh().sum()
    np.testing.assert_allclose(backprop(tape, loss)[w.node], xv.T)


def test_non_scalar_loss_rejected():
    tape = Tape()
    x = tape.variable([1.0, 2.0])
    with pytest.raises(ValueError, match="scalar"):
        backprop(tape, x * 2.0)


def test_grad_check_examples():
    assert grad_check(lambda x: x.square().sum(), [1.0, -1.0], 1e-5) < 1e-6
    assert grad_check(lambda x: x.softplus().sum(), [0.0, 0.0, 0.0]) < 1e-7
    tape = Tape()
    x = tape.variable(np.zeros(3))
    np.testing.assert_allclose(backprop(tape, x.softplus().sum())[x.node], 0.5)


def test_grad_check_rejects_nan():
    with pytest.raises(FloatingPointError):
        grad_check(lambda x: x.log().sum(), [-1.0])


def test_grad_check_requires_float64():
    with precision("float32"):
        with pytest.raises(RuntimeError):
            grad_check(lambda x: x.sum(), [1.0])


def test_mixed_precision_on_one_tape_rejected():
    tape = Tape()
    x = tape.variable([1.0])
    with pytest.raises(TypeError):
        record_primitive("add", [x, Tensor(np.ones(1, dtype=np.float32), _raw=True)])


def test_tapes_do_not_mix():
    a = Tape().variable(1.0)
    b = Tape().variable(2.0)
    with pytest.raises(RuntimeError):
        a + b


def test_backprop_visits_in_reverse_order_and_parents_precede():
    tape = Tape()
    x = tape.variable(np.arange(4.0))
    y = ((x * 2.0).exp().sum() + x.tanh().sum()).log()
    for i, node in enumerate(tape.nodes):
        assert all(p is None or p < i for p in node.parents)
    backprop(tape, y)


def _random_case(name, rng):
    """(function of one Tensor, input array) exercising primitive ``name``."""
    shape = tuple(rng.integers(1, 4, size=2))
    x = rng.standard_normal(shape)
    other = Tensor(rng.standard_normal(shape))
    row = Tensor(rng.standard_normal((1, shape[1])))
    if name == "add":
        return lambda t: ((t + row) * other).sum(), x
    if name == "sub":
        return lambda t: ((row - t) * other).sum(), x
    if name == "mul":
        return lambda t: (t * t * other).sum(), x
    if name == "matmul":
        m = Tensor(rng.standard_normal((shape[1], 3)))
        return lambda t: ((t @ m) * (t @ m)).sum(), x
    if name == "sum":
        return lambda t: (t.sum(axis=0) * row.reshape(shape[1])).sum(), x
    if name == "mean":
        return lambda t: (t.mean(axis=1, keepdims=True) * t).sum(), x
    if name == "exp":
        return lambda t: (t.exp() * other).sum(), x
    if name == "log":
        return lambda t: (t.log() * other).sum(), np.abs(x) + 0.5
    if name == "tanh":
        return lambda t: (t.tanh() * other).sum(), x
    if name == "softplus":
        return lambda t: (t.softplus() * other).sum(), x
    if name == "sigmoid":
        return lambda t: (t.sigmoid() * other).sum(), x
    if name == "relu":
        x = np.where(np.abs(x) < 0.05, 0.3, x)
        return lambda t: (t.relu() * other).sum(), x
    if name == "square":
        return lambda t: (t.square() * other).sum(), x
    if name == "clip":
        x = np.where(np.abs(np.abs(x) - 0.5) < 0.05, 0.2, x)
        return lambda t: (t.clip(-0.5, 0.5) * other).sum(), x
    if name == "concat":
        return lambda t: (concat([t, t.square()], axis=1) * concat([other, other], axis=1)).sum(), x
    if name == "slice":
        return lambda t: (t[:, :1].square() * other[:, :1]).sum(), x
    if name == "broadcast":
        return lambda t: (t[:1].broadcast_to(shape) * other).sum(), x
    if name == "reshape":
        # gradient exp(t) * (o^2 + 1) stays away from zero, so the relative error is well conditioned
        return lambda t: (t.reshape(-1).exp() * (other.reshape(-1).square() + 1.0)).sum(), x
    raise AssertionError(name)


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_every_primitive_matches_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = 0.0
    for _ in range(100):
        f, x = _random_case(name, rng)
        worst = max(worst, grad_check(f, x, 1e-6))
    assert worst < 1e-5, worst


def test_determinism_on_fresh_tapes():
    def run():
        rng = np.random.default_rng(7)
        tape = Tape()
        w = tape.variable(rng.standard_normal((4, 3)))
        x = Tensor(rng.standard_normal((5, 4)))
        loss = (x @ w).tanh().softplus().sum()
        return backprop(tape, loss)[w.node]

    a, b = run(), run()
    assert a.tobytes() == b.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6))
def test_gradient_is_linear_in_losses(values):
    x0 = np.array(values)

    def grad(make):
        tape = Tape()
        x = tape.variable(x0)
        return backprop(tape, make(x))[x.node]

    f1 = lambda x: x.tanh().sum()
    f2 = lambda x: (x.square() * 0.7).sum()
    np.testing.assert_allclose(grad(lambda x: f1(x) + f2(x)), grad(f1) + grad(f2), rtol=1e-12, atol=1e-12)
