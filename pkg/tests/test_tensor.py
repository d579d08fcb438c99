import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spdda import ops
from spdda.gradcheck import analytic_gradient, gradcheck
from spdda.optim import Adam, AdamState, adam_step
from spdda.tensor import ShapeError, Tensor, backward, current_tape, no_grad, tape_scope, zero_grads


def leaf(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


def test_data_is_float64_and_sized():
    t = Tensor([[1, 2, 3], [4, 5, 6]])
    assert t.data.dtype == np.float64
    assert t.data.size == np.prod(t.shape)


def test_root_grad_is_exactly_one():
    x = leaf([1.0, 2.0])
    with tape_scope():
        y = ops.sum(ops.square(x))
        backward(y)
    assert y.grad == 1.0


def test_sum_gives_ones():
    x = leaf(np.arange(6.0).reshape(2, 3))
    with tape_scope():
        backward(ops.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_square_at_three_gives_six():
    x = leaf(3.0)
    with tape_scope():
        backward(ops.mul(x, x))
    assert x.grad == 6.0


def test_fan_out_accumulates():
    x = leaf([2.0])
    with tape_scope():
        y = ops.add(ops.mul(x, 3.0), ops.square(x))  # 3x + x^2
        backward(ops.sum(y))
    assert x.grad[0] == 3.0 + 2 * 2.0


def test_repeated_backward_accumulates_until_reset():
    x = leaf([1.0, -1.0])
    for _ in range(2):
        with tape_scope():
            backward(ops.sum(ops.scale(x, 2.0)))
    np.testing.assert_array_equal(x.grad, [4.0, 4.0])
    zero_grads([x])
    assert x.grad is None


def test_non_scalar_root_rejected():
    x = leaf([1.0, 2.0])
    with tape_scope(), pytest.raises(ShapeError):
        backward(ops.scale(x, 2.0))


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with tape_scope() as tape:
        with no_grad():
            y = ops.exp(x)
        assert len(tape) == 0
        assert not y.requires_grad


def test_tape_is_topological():
    x = leaf(np.ones(3))
    with tape_scope() as tape:
        a = ops.exp(x)
        b = ops.mul(a, x)
        ops.sum(ops.add(a, b))
        seen = {id(x)}
        for rec in tape.records:
            assert all(id(i) in seen for i in rec.inputs if i.requires_grad)
            seen.add(id(rec.output))


def test_tape_reset_after_scope():
    with tape_scope() as tape:
        ops.exp(leaf([1.0]))
        assert len(tape) == 1
    assert len(tape) == 0


def test_tapes_are_thread_local():
    seen = []

    def worker():
        with tape_scope() as t:
            seen.append(t)

    with tape_scope() as main:
        th = threading.Thread(target=worker)
        th.start()
        th.join()
        assert current_tape() is main
    assert seen[0] is not main


def test_gradient_linearity(rng):
    x0 = rng.uniform(-1, 1, (3, 4))

    def f(x):
        return ops.sum(ops.tanh(ops.matmul(x, ops.transpose(x))))

    def g(x):
        return ops.mean(ops.exp(x))

    a, b = 0.7, -1.3
    (gf,) = analytic_gradient(f, [Tensor(x0.copy())])
    (gg,) = analytic_gradient(g, [Tensor(x0.copy())])
    (gc,) = analytic_gradient(lambda x: ops.add(ops.scale(f(x), a), ops.scale(g(x), b)), [Tensor(x0.copy())])
    np.testing.assert_allclose(gc, a * gf + b * gg, atol=1e-10, rtol=0)


def test_determinism(rng):
    x0 = rng.uniform(-1, 1, (4, 5))

    def run():
        x = leaf(x0.copy())
        with tape_scope():
            y = ops.sum(ops.softmax(ops.matmul(x, ops.transpose(x)), axis=1))
            backward(ops.mean(ops.log(ops.add(ops.exp(x), 1.0))))
        return y.data.tobytes(), x.grad.tobytes()

    assert run() == run()


def test_composite_mlp_gradcheck(rng):
    x = Tensor(rng.uniform(-1, 1, (5, 4)))
    w1, w2 = Tensor(rng.uniform(-1, 1, (4, 6))), Tensor(rng.uniform(-1, 1, (6, 3)))
    labels = np.array([0, 2, 1, 1, 0])

    def loss(x, w1, w2):
        logits = ops.matmul(ops.tanh(ops.matmul(x, w1)), w2)
        return ops.neg(ops.mean(ops.index(ops.log_softmax(logits, axis=1), (np.arange(5), labels))))

    assert gradcheck(loss, [x, w1, w2]) < 1e-4


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params_and_decays_moments():
    p = {"w": np.array([1.0, -2.0])}
    st_ = AdamState(m={"w": np.array([0.5, 0.5])}, v={"w": np.array([0.2, 0.2])}, t=3)
    before = p["w"].copy()
    adam_step(p, {"w": np.zeros(2)}, st_, lr=0.1)
    np.testing.assert_allclose(st_.m["w"], 0.9 * 0.5)
    np.testing.assert_allclose(st_.v["w"], 0.999 * 0.2)
    assert st_.t == 4
    # the update is driven by the decayed first moment only
    m_hat = 0.45 / (1 - 0.9 ** 4)
    v_hat = 0.1998 / (1 - 0.999 ** 4)
    np.testing.assert_allclose(p["w"], before - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8))


def test_adam_zero_gradient_from_fresh_state_is_noop():
    p = {"w": np.array([1.0, -2.0])}
    st_ = AdamState()
    adam_step(p, {"w": np.zeros(2)}, st_, lr=0.1)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


@given(st.lists(st.floats(-10, 10).filter(lambda v: abs(v) > 1e-3), min_size=1, max_size=6))
def test_adam_first_step_is_signed_lr(g):
    g = np.array(g)
    p = {"w": np.zeros_like(g)}
    adam_step(p, {"w": g}, AdamState(), lr=0.01)
    np.testing.assert_allclose(p["w"], -0.01 * np.sign(g), rtol=1e-5)


def test_adam_converges_on_parabola():
    x = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam({"x": x}, lr=0.1)
    for _ in range(200):
        with tape_scope():
            backward(ops.sum(ops.square(x)))
        opt.step()
        opt.zero_grad()
    assert abs(x.data[0]) < 1e-3
