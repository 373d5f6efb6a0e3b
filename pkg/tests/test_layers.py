import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jvae import autodiff as ad
from jvae.autodiff import Graph, ShapeError, Tensor
from jvae.gradcheck import check_gradients
from jvae.layers import (
    LinearHeadParams,
    LstmStackParams,
    linear_head,
    lstm_forward,
    lstm_layer,
    lstm_layer_composite,
    splice,
)


def scalar_lstm(x, w, b):
    """Pure-Python loops over every scalar; no numpy linear algebra."""
    nt, d_in = len(x), len(x[0])
    hdim = len(b) // 4
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))  # noqa: E731
    h = [0.0] * hdim
    c = [0.0] * hdim
    out = []
    for t in range(nt):
        inp = list(x[t]) + h
        a = [b[j] + sum(inp[k] * w[k][j] for k in range(d_in + hdim)) for j in range(4 * hdim)]
        new_h, new_c = [], []
        for u in range(hdim):
            i_g = sig(a[u])
            f_g = sig(a[hdim + u])
            g_g = math.tanh(a[2 * hdim + u])
            o_g = sig(a[3 * hdim + u])
            cu = f_g * c[u] + i_g * g_g
            new_c.append(cu)
            new_h.append(o_g * math.tanh(cu))
        h, c = new_h, new_c
        out.append(h)
    return np.array(out)


def test_lstm_zero_weights_zero_output():
    stack = LstmStackParams(2, 3, 4)
    params = {k: Tensor(np.zeros(s)) for k, s in stack.shapes().items()}
    out = lstm_forward(stack, params, np.random.default_rng(0).normal(size=(5, 3)))
    np.testing.assert_array_equal(out.data, np.zeros((5, 4)))


def test_lstm_is_causal():
    rng = np.random.default_rng(1)
    stack = LstmStackParams(3, 2, 3)
    params = {k: Tensor(v) for k, v in stack.init(rng).items()}
    x = rng.normal(size=(2, 2))
    one = lstm_forward(stack, params, x[:1]).data
    two = lstm_forward(stack, params, x).data
    # matrix products of different sizes may differ in the last ulp
    np.testing.assert_allclose(one[0], two[0], rtol=1e-14, atol=1e-16)


def test_lstm_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 2))
    w = rng.normal(size=(4, 8))
    b = rng.normal(size=8)
    got = lstm_layer(x, w, b).data
    np.testing.assert_allclose(got, scalar_lstm(x, w, b), rtol=0, atol=1e-12)


def test_fused_matches_composite_values_and_grads():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 4, 3))
    w = rng.normal(size=(6, 12)) * 0.5
    b = rng.normal(size=12)
    weights = rng.normal(size=(2, 4, 3))
    grads = []
    for fn in (lstm_layer, lstm_layer_composite):
        g = Graph()
        xt, wt, bt = g.variable(x), g.variable(w), g.variable(b)
        out = fn(xt, wt, bt)
        g.backward((out * weights).sum())
        grads.append((out.data, g.grad(xt), g.grad(wt), g.grad(bt)))
    for a, c in zip(*grads):
        np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-13)


def test_batched_lstm_equals_per_sequence():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 5, 2))
    w, b = rng.normal(size=(5, 12)), rng.normal(size=12)
    batched = lstm_layer(x, w, b).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], lstm_layer(x[i], w, b).data, rtol=1e-13, atol=1e-14)


@pytest.mark.parametrize("num_frames", [1, 2, 7])
def test_lstm_output_shape(num_frames):
    stack = LstmStackParams(2, 4, 5)
    params = {k: Tensor(v) for k, v in stack.init(np.random.default_rng(0)).items()}
    assert lstm_forward(stack, params, np.zeros((num_frames, 4))).shape == (num_frames, 5)


def test_lstm_dimension_mismatch():
    stack = LstmStackParams(1, 4, 5)
    params = {k: Tensor(v) for k, v in stack.init(np.random.default_rng(0)).items()}
    with pytest.raises(ShapeError):
        lstm_forward(stack, params, np.zeros((3, 5)))


def test_lstm_init():
    stack = LstmStackParams(2, 3, 4)
    p = stack.init(np.random.default_rng(0))
    assert p["l0.w"].shape == (7, 16) and p["l1.w"].shape == (8, 16)
    assert np.all(np.abs(p["l0.w"]) <= 1 / math.sqrt(7))
    np.testing.assert_array_equal(p["l0.b"][4:8], 1.0)
    assert np.count_nonzero(p["l0.b"]) == 4


def test_lstm_gradients_fd():
    rng = np.random.default_rng(5)
    stack = LstmStackParams(2, 2, 3)
    inputs = {"x": rng.uniform(-2, 2, size=(4, 2)), **stack.init(rng)}
    weights = rng.normal(size=(4, 3))

    def f(p):
        return (lstm_forward(stack, p, p["x"]) * weights).sum()

    errs = check_gradients(f, inputs)
    assert max(errs.values()) < 1e-4, errs


def test_linear_head_cases():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(4, 3))
    ident = {"w": Tensor(np.eye(3)), "b": Tensor(np.zeros(3))}
    np.testing.assert_array_equal(linear_head(ident, x).data, x)
    bias = np.array([1.0, -2.0])
    const = {"w": Tensor(np.zeros((3, 2))), "b": Tensor(bias)}
    np.testing.assert_array_equal(linear_head(const, x).data, np.tile(bias, (4, 1)))
    p = LinearHeadParams(3, 2).init(rng)
    got = linear_head({k: Tensor(v) for k, v in p.items()}, x).data
    np.testing.assert_array_equal(got, (ad.matmul(x, p["w"]) + p["b"]).data)
    with pytest.raises(ShapeError):
        linear_head(ident, np.zeros((2, 4)))


def test_splice_identity_and_edges():
    x = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(splice(x, 0).data, x)
    f = np.array([[1.5, -2.0]])
    np.testing.assert_array_equal(splice(f, 2).data, np.tile(f, (1, 5)))


def test_splice_hand_enumeration():
    a, b, c = [1.0, 2.0], [3.0, 4.0], [5.0, 6.0]
    got = splice(np.array([a, b, c]), 1).data
    expected = np.array([a + a + b, a + b + c, b + c + c])
    np.testing.assert_array_equal(got, expected)


def test_splice_batched_respects_lengths():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 5, 3))
    lengths = np.array([5, 3])
    got = splice(x, 2, lengths).data
    np.testing.assert_array_equal(got[0], splice(x[0], 2).data)
    np.testing.assert_array_equal(got[1, :3], splice(x[1, :3], 2).data)


@settings(max_examples=50, deadline=None)
@given(u=arrays(np.float64, (4, 2), elements=st.floats(-10, 10)),
       v=arrays(np.float64, (4, 2), elements=st.floats(-10, 10)),
       alpha=st.floats(-3, 3), beta=st.floats(-3, 3), context=st.integers(0, 3))
def test_splice_is_linear(u, v, alpha, beta, context):
    lhs = splice(alpha * u + beta * v, context).data
    rhs = alpha * splice(u, context).data + beta * splice(v, context).data
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


def test_splice_gradient_fd():
    rng = np.random.default_rng(8)
    x = rng.uniform(-2, 2, size=(2, 4, 2))
    weights = rng.normal(size=(2, 4, 10))
    lengths = np.array([4, 2])
    errs = check_gradients(lambda p: (splice(p["x"], 2, lengths) * weights).sum(), {"x": x})
    assert errs["x"] < 1e-4
