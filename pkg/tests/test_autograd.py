import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mhn.autograd import (
    AdamState,
    ParamStore,
    Tensor,
    adam_step,
    gelu,
    layer_norm,
    matmul,
    mean_pool_time,
    no_grad,
    softmax_last,
)
from mhn.errors import ContractError, DimensionError, EmptySequenceError
from mhn.gradcheck import check_function


def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


# -- matmul ------------------------------------------------------------------

def test_matmul_identity():
    out = matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_selector_row():
    assert matmul(Tensor([[1.0, 0.0]]), Tensor([[2.0], [5.0]])).data.tolist() == [[2.0]]


def test_matmul_gradient_matches_central_differences():
    rng = np.random.default_rng(0)
    a0, b0 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    a, b = Tensor(a0, requires_grad=True), Tensor(b0, requires_grad=True)
    matmul(a, b).sum().backward()
    assert rel_err(a.grad, central_diff(lambda x: (x @ b0).sum(), a0)) < 1e-6
    assert rel_err(b.grad, central_diff(lambda x: (a0 @ x).sum(), b0)) < 1e-6


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


# -- softmax -----------------------------------------------------------------

def test_softmax_symmetric_pair():
    np.testing.assert_allclose(softmax_last(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_softmax_large_inputs_do_not_overflow():
    out = softmax_last(Tensor([1000.0, 1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [1 / 3] * 3)


def test_softmax_reference_values():
    e = np.exp([1.0, 2.0, 3.0])
    np.testing.assert_allclose(softmax_last(Tensor([1.0, 2.0, 3.0])).data, e / e.sum(), atol=1e-12)
    np.testing.assert_allclose(softmax_last(Tensor([1.0, 2.0, 3.0])).data, [0.09003, 0.24473, 0.66524],
                               atol=1e-5)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_softmax_rows_are_probability_vectors(x):
    out = softmax_last(Tensor(x)).data
    assert np.all(out >= 0) and np.all(out <= 1)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)


def test_softmax_mask_zeroes_masked_entries():
    out = softmax_last(Tensor([[1.0, 5.0, 2.0]]), mask=np.array([[True, False, True]])).data
    assert out[0, 1] == 0.0
    assert out.sum() == pytest.approx(1.0)


# -- layer norm --------------------------------------------------------------

def test_layer_norm_constant_row_is_zero():
    out = layer_norm(Tensor([[5.0, 5.0, 5.0, 5.0]]), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_layer_norm_symmetric_pair():
    out = layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
    np.testing.assert_allclose(out, [1.0, -1.0], atol=1e-5)


def test_layer_norm_gradient():
    rng = np.random.default_rng(1)
    x0, g0, b0 = rng.normal(size=(2, 8)), rng.normal(size=8), rng.normal(size=8)
    r = rng.normal(size=(2, 8))

    def f(x):
        mu = x.mean(-1, keepdims=True)
        var = x.var(-1, keepdims=True)
        return (((x - mu) / np.sqrt(var + 1e-5) * g0 + b0) * r).sum()

    x = Tensor(x0, requires_grad=True)
    (layer_norm(x, Tensor(g0), Tensor(b0)) * r).sum().backward()
    assert rel_err(x.grad, central_diff(f, x0)) < 1e-5


def test_layer_norm_rejects_empty_feature_axis():
    with pytest.raises(DimensionError):
        layer_norm(Tensor(np.zeros((2, 0))), Tensor(np.zeros(0)), Tensor(np.zeros(0)))


# -- gelu --------------------------------------------------------------------

def gelu_reference(x):
    return 0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))


def test_gelu_examples():
    assert gelu(Tensor([0.0])).data[0] == 0.0
    assert gelu(Tensor([10.0])).data[0] == pytest.approx(10.0, abs=1e-6)
    assert gelu(Tensor([-0.5])).data[0] == pytest.approx(-0.1543, abs=1e-3)
    assert gelu(Tensor([-0.5])).data[0] == pytest.approx(gelu_reference(-0.5), abs=1e-15)


def test_gelu_monotone_on_grid():
    # the tanh approximation dips slightly below zero for negative inputs; it is
    # nondecreasing from its minimum near -0.75 upwards
    grid = np.linspace(-0.7, 8, 2001)
    assert np.all(np.diff(gelu(Tensor(grid)).data) >= 0)


# -- mean pool ---------------------------------------------------------------

def test_mean_pool_examples():
    np.testing.assert_array_equal(mean_pool_time(Tensor([[1.0, 2.0]])).data, [1.0, 2.0])
    np.testing.assert_array_equal(mean_pool_time(Tensor([[1.0, 3.0], [3.0, 1.0]])).data, [2.0, 2.0])


def test_mean_pool_gradient_is_one_over_length():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 3)), requires_grad=True)
    mean_pool_time(x).sum().backward()
    np.testing.assert_allclose(x.grad, np.full((4, 3), 0.25))


def test_mean_pool_empty_sequence():
    with pytest.raises(EmptySequenceError):
        mean_pool_time(Tensor(np.zeros((0, 3))))


# -- backward ----------------------------------------------------------------

def test_backward_sum_gives_ones():
    p = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    p.sum().backward()
    np.testing.assert_array_equal(p.grad, np.ones((2, 3)))


def test_backward_accumulates_over_uses():
    p = Tensor([1.5], requires_grad=True)
    (p + p).sum().backward()
    assert p.grad.tolist() == [2.0]


def test_gradient_of_doubled_function_is_doubled():
    rng = np.random.default_rng(3)
    x0, w0 = rng.normal(size=(3, 4)), rng.normal(size=(4, 4))

    def f(w):
        return (gelu(matmul(Tensor(x0), w)) * 0.3).sum()

    w1 = Tensor(w0, requires_grad=True)
    f(w1).backward()
    w2 = Tensor(w0, requires_grad=True)
    (f(w2) + f(w2)).backward()
    np.testing.assert_allclose(w2.grad, 2 * w1.grad, rtol=0, atol=1e-14)


def test_backward_rejects_non_scalar():
    p = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (p * 2.0).backward()


def test_no_grad_records_nothing():
    p = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = (p * 2.0).sum()
    assert not out.requires_grad


def test_forward_and_gradients_are_deterministic():
    def run():
        rng = np.random.default_rng(7)
        w = Tensor(rng.normal(size=(5, 5)), requires_grad=True)
        x = Tensor(rng.normal(size=(3, 5)))
        loss = (softmax_last(matmul(x, w)) * Tensor(rng.normal(size=(3, 5)))).sum()
        loss.backward()
        return loss.data.tobytes(), w.grad.tobytes()

    assert run() == run()


# -- finite-difference property over primitives ------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_random_primitive_gradients_pass_at_1e5(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 5))
    cases = {
        "softmax": (lambda x: softmax_last(x), {"x": x}),
        "gelu": (lambda x: gelu(x), {"x": x}),
        "layer_norm": (layer_norm, {"x": x, "gamma": rng.normal(size=5), "beta": rng.normal(size=5)}),
        "matmul": (matmul, {"a": x, "b": rng.normal(size=(5, 3))}),
    }
    for name, (fn, inputs) in cases.items():
        assert check_function(name, fn, inputs, rng).max_rel_error < 1e-5, name


# -- adam --------------------------------------------------------------------

def _store(value, grad):
    s = ParamStore()
    t = s.add("w", np.array(value, dtype=float))
    t.grad = np.array(grad, dtype=float)
    return s, t


def test_adam_first_step_bias_correction_cancels():
    s, t = _store([0.0], [1.0])
    state = AdamState(lr=1e-4)
    adam_step(s, state)
    assert t.data[0] == pytest.approx(-1e-4 * (1 / (1 + 1e-8)), rel=1e-12)
    assert state.step == 1
    np.testing.assert_array_equal(t.grad, [0.0])


def test_adam_zero_gradient_leaves_params():
    s, t = _store([0.5, -2.0], [0.0, 0.0])
    state = AdamState()
    adam_step(s, state)
    np.testing.assert_array_equal(t.data, [0.5, -2.0])
    assert state.step == 1


def test_adam_two_steps_match_closed_form():
    s, t = _store([1.0], [1.0])
    state = AdamState(lr=1e-3)
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, 1e-3
    m = v = 0.0
    x = 1.0
    for step in (1, 2):
        t.grad = np.array([1.0])
        adam_step(s, state)
        m = b1 * m + (1 - b1)
        v = b2 * v + (1 - b2)
        x -= lr * (m / (1 - b1 ** step)) / (math.sqrt(v / (1 - b2 ** step)) + eps)
    assert t.data[0] == pytest.approx(x, rel=1e-14)


def test_adam_missing_gradient_names_parameter():
    s = ParamStore()
    s.add("decoder.out.weight", np.ones(2))
    with pytest.raises(ContractError, match="decoder.out.weight"):
        adam_step(s, AdamState())


def test_param_store_rejects_duplicates_and_keeps_order():
    s = ParamStore()
    for name in ("b", "a", "c"):
        s.add(name, np.zeros(2))
    assert s.names() == ["b", "a", "c"]
    assert s.count() == 6
    with pytest.raises(ContractError):
        s.add("a", np.zeros(1))
