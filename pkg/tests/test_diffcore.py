import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sib import diffcore as dc
from helpers import check_grads

finite = st.floats(-3, 3, allow_nan=False)


def _p(rng, *shape, name="p"):
    return dc.Parameter(rng.standard_normal(shape), name)


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div", "matmul", "relu", "sigmoid", "exp",
                                "log", "square", "logsumexp", "log_softmax", "concat", "getitem",
                                "reshape", "mean"])
def test_ops_match_finite_differences(op):
    rng = np.random.default_rng(1)
    a, b = _p(rng, 3, 4, name="a"), _p(rng, 3, 4, name="b")
    c = _p(rng, 4, 2, name="c")
    w = rng.standard_normal((3, 4))
    builds = {
        "add": lambda: dc.sum_((a + b) * w),
        "sub": lambda: dc.sum_((a - b[0]) * w),  # broadcast row
        "mul": lambda: dc.sum_(a * b * w),
        "div": lambda: dc.sum_(a / (dc.square(b) + 1.0) * w),
        "matmul": lambda: dc.sum_(dc.matmul(a, c) * w[:, :2]),
        "relu": lambda: dc.sum_(dc.relu(a) * w),
        "sigmoid": lambda: dc.sum_(dc.sigmoid(a * 4.0) * w),
        "exp": lambda: dc.sum_(dc.exp(a) * w),
        "log": lambda: dc.sum_(dc.log(dc.square(a) + 0.5) * w),
        "square": lambda: dc.sum_(dc.square(a) * w),
        "logsumexp": lambda: dc.sum_(dc.logsumexp(a * 2.0, axis=1) * w[:, 0]),
        "log_softmax": lambda: dc.sum_(dc.log_softmax(a, axis=1) * w),
        "concat": lambda: dc.sum_(dc.concat([a, b], axis=1) * np.hstack([w, w[::-1]])),
        "getitem": lambda: dc.sum_(a[np.array([0, 2, 2]), np.array([1, 3, 3])] * w[0, :3]),
        "reshape": lambda: dc.sum_(dc.reshape(a, (2, 6)) * w.reshape(2, 6)),
        "mean": lambda: dc.mean(a * w, axis=0).sum(),
    }
    assert check_grads(builds[op], [a, b, c]) < 1e-5


def test_relu_kink_is_avoided_by_data():
    # relu gradient at exactly 0 is defined as 0
    x = dc.Parameter(np.array([0.0, 1.0, -1.0]), "x")
    dc.backward(dc.sum_(dc.relu(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 3), elements=finite), arrays(np.float64, (2, 3), elements=finite),
       st.floats(-2, 2), st.floats(-2, 2))
def test_backward_is_linear(x, y, alpha, gamma):
    p = dc.Parameter(x.copy(), "p")

    def grad_of(build):
        dc.zero_grad([p])
        dc.backward(build())
        return p.grad.copy()

    f = lambda: dc.sum_(dc.square(p) * y)
    g = lambda: dc.sum_(dc.sigmoid(p))
    combo = grad_of(lambda: f() * alpha + g() * gamma)
    np.testing.assert_allclose(combo, alpha * grad_of(f) + gamma * grad_of(g), atol=1e-10)


def test_grad_accumulates_over_shared_use():
    x = dc.Parameter(np.array([2.0]), "x")
    dc.backward(dc.sum_(x * x + x))
    np.testing.assert_allclose(x.grad, [5.0])


def test_backward_requires_scalar():
    x = dc.Parameter(np.ones(3), "x")
    with pytest.raises(ValueError):
        dc.backward(x * 2.0)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(dc.ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        dc.matmul(dc.const(np.ones((2, 3))), dc.const(np.ones((4, 2))))


def test_broadcast_mismatch_raises():
    with pytest.raises(dc.ShapeError):
        dc.const(np.ones((2, 3))) + dc.const(np.ones((4,)))


def test_adam_first_step_moves_by_lr_times_sign():
    # after bias correction the first update is lr * g / (|g| + eps)
    g = np.array([0.5, -2.0, 1e-3])
    p = dc.Parameter(np.zeros(3), "p")
    p.grad = g.copy()
    dc.adam_step([p], dc.AdamState(), lr=0.01)
    np.testing.assert_allclose(p.value, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_matches_reference_over_steps():
    rng = np.random.default_rng(0)
    p = dc.Parameter(rng.standard_normal(4), "p")
    ref = p.value.copy()
    m = v = np.zeros(4)
    state = dc.AdamState()
    for t in range(1, 6):
        g = rng.standard_normal(4)
        p.grad = g.copy()
        dc.adam_step([p], state, lr=1e-3)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g ** 2
        ref = ref - 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.value, ref, rtol=1e-12)


def test_adam_skips_frozen_parameters():
    a = dc.Parameter(np.ones(2), "a")
    b = dc.Parameter(np.ones(2), "b", trainable=False)
    a.grad = b.grad = np.ones(2)
    dc.adam_step([a, b], dc.AdamState(), lr=0.1)
    assert not np.allclose(a.value, 1.0)
    np.testing.assert_array_equal(b.value, 1.0)


def test_adam_refuses_nonfinite_gradient_and_leaves_params_untouched():
    a = dc.Parameter(np.ones(2), "a")
    b = dc.Parameter(np.ones(2), "b")
    a.grad = np.ones(2)
    b.grad = np.array([1.0, np.nan])
    state = dc.AdamState()
    with pytest.raises(dc.NonFiniteGradient, match="b"):
        dc.adam_step([a, b], state, lr=0.1)
    np.testing.assert_array_equal(a.value, 1.0)
    assert state.step == 0


def test_sigmoid_is_stable_at_extremes():
    x = dc.Parameter(np.array([-800.0, 800.0]), "x")
    s = dc.sigmoid(x)
    dc.backward(dc.sum_(s))
    assert np.all(np.isfinite(s.value)) and np.all(np.isfinite(x.grad))
