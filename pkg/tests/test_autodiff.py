import numpy as np
import pytest

from jvae import autodiff as ad
from jvae.autodiff import Graph, GraphError, ShapeError, Tensor
from jvae.gradcheck import check_gradients

TOL = 1e-4


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(a, np.eye(2)).data, [[1, 2], [3, 4]])


def test_exp_zero_is_one():
    np.testing.assert_array_equal(ad.exp(np.zeros(3)).data, np.ones(3))


def test_softmax_uniform():
    np.testing.assert_allclose(ad.softmax(np.zeros(4)).data, [0.25] * 4, rtol=0, atol=1e-15)


def test_square_grad():
    g = Graph()
    w = g.variable([1.0, 2.0, 3.0])
    grads = g.backward(ad.square(w).sum())
    np.testing.assert_array_equal(grads[w.node_id].data, [2, 4, 6])


def test_sigmoid_grad_at_zero():
    g = Graph()
    x = g.variable(0.0)
    g.backward(ad.sigmoid(x))
    assert g.grad(x) == pytest.approx(0.25, abs=1e-15)


def test_detach_blocks_gradient():
    g = Graph()
    w = g.variable([1.0, -2.0])
    v = g.variable([3.0, 4.0])
    loss = (ad.detach(w) * v).sum()
    g.backward(loss)
    np.testing.assert_array_equal(g.grad(w), [0, 0])
    np.testing.assert_array_equal(g.grad(v), [1, -2])
    assert ad.detach(Tensor(3.0)).item() == 3.0
    assert not ad.detach(w).tracked


def test_accumulates_over_consumers():
    g = Graph()
    x = g.variable([1.5, -0.5])
    g.backward((x + x).sum())
    np.testing.assert_array_equal(g.grad(x), [2, 2])


def test_loss_slot_is_ones_and_unreachable_is_zero():
    g = Graph()
    a = g.variable([1.0, 2.0])
    b = g.variable([[5.0]])
    loss = ad.square(a).sum()
    grads = g.backward(loss)
    assert grads[loss.node_id].data == 1.0
    np.testing.assert_array_equal(grads[b.node_id].data, [[0.0]])


def test_backward_errors():
    g = Graph()
    x = g.variable([1.0, 2.0])
    with pytest.raises(GraphError, match="scalar"):
        g.backward(ad.square(x))
    loss = x.sum()
    g.backward(loss)
    with pytest.raises(GraphError, match="already"):
        g.backward(loss)
    g.reset()
    g.backward(loss)
    np.testing.assert_array_equal(g.grad(x), [1, 1])


def test_mixing_graphs_rejected():
    a = Graph().variable([1.0])
    b = Graph().variable([1.0])
    with pytest.raises(GraphError):
        a + b


@pytest.mark.parametrize("op, args", [
    ("matmul", (np.ones((2, 3)), np.ones((2, 3)))),
    ("add", (np.ones((2, 3)), np.ones((4,)))),
    ("mul", (np.ones((2,)), np.ones((3,)))),
])
def test_shape_errors_name_operation(op, args):
    with pytest.raises(ShapeError) as exc:
        getattr(ad, op)(*args)
    assert op in str(exc.value)
    assert str(args[0].shape) in str(exc.value)


def test_concat_shape_error():
    with pytest.raises(ShapeError, match="concat"):
        ad.concat([np.ones((2, 3)), np.ones((3, 3))])


def test_untracked_ops_record_nothing():
    out = ad.tanh(Tensor([0.1])) * 2.0
    assert not out.tracked


def test_forward_is_bit_reproducible():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))

    def run():
        g = Graph()
        x, w = g.variable(a), g.variable(b)
        return ad.log_softmax(ad.tanh(x @ w)).sum().item()

    assert run() == run()


# every primitive, central differences on inputs in [-2, 2]
_rng = np.random.default_rng(1234)


def _u(*shape, lo=-2.0, hi=2.0):
    return _rng.uniform(lo, hi, size=shape)


PRIMITIVES = {
    "add": (lambda p: ad.add(p["a"], p["b"]).sum(), {"a": _u(3, 4), "b": _u(4)}),
    "sub": (lambda p: ad.sub(p["a"], p["b"]).sum() * 1.0, {"a": _u(3, 1), "b": _u(3, 4)}),
    "mul": (lambda p: ad.mul(p["a"], p["b"]).sum(), {"a": _u(3, 4), "b": _u(3, 4)}),
    "matmul": (lambda p: ad.square(p["a"] @ p["b"]).sum(), {"a": _u(2, 3, 4), "b": _u(4, 5)}),
    "concat": (lambda p: ad.square(ad.concat([p["a"], p["b"]])).sum(), {"a": _u(3, 2), "b": _u(3, 4)}),
    "slice": (lambda p: ad.square(p["a"][1:, ::2]).sum(), {"a": _u(4, 5)}),
    "gather": (lambda p: ad.square(p["a"][np.array([0, 2, 2, 1])]).sum(), {"a": _u(3, 2)}),
    "sum": (lambda p: ad.square(p["a"].sum(axis=0)).sum(), {"a": _u(3, 4)}),
    "mean": (lambda p: ad.square(p["a"].mean(axis=1)).sum(), {"a": _u(3, 4)}),
    "exp": (lambda p: ad.exp(p["a"]).sum(), {"a": _u(5)}),
    "expm1": (lambda p: ad.expm1(p["a"]).sum(), {"a": _u(5)}),
    "log": (lambda p: ad.log(p["a"]).sum(), {"a": _u(5, lo=0.2, hi=2.0)}),
    "tanh": (lambda p: ad.tanh(p["a"]).sum(), {"a": _u(5)}),
    "sigmoid": (lambda p: ad.sigmoid(p["a"]).sum(), {"a": _u(5)}),
    "square": (lambda p: ad.square(p["a"]).sum(), {"a": _u(5)}),
    "softmax": (lambda p: (ad.softmax(p["a"]) * np.arange(4.0)).sum(), {"a": _u(3, 4)}),
    "log_softmax": (lambda p: (ad.log_softmax(p["a"]) * np.arange(4.0)).sum(), {"a": _u(3, 4)}),
    "reshape": (lambda p: (p["a"].reshape(6) * np.arange(6.0)).sum(), {"a": _u(2, 3)}),
    "clip": (lambda p: ad.square(ad.clip(p["a"], -1.0, 1.0)).sum(),
             {"a": np.array([-1.7, -0.3, 0.4, 1.9])}),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    f, inputs = PRIMITIVES[name]
    errs = check_gradients(f, inputs, h=1e-5, floor=1e-7)
    assert max(errs.values()) < TOL, errs


def test_random_composite_gradient():
    """Five parameters through every primitive at once."""
    rng = np.random.default_rng(99)
    inputs = {k: rng.uniform(-2, 2, size=s) for k, s in
              [("w", (3, 3)), ("b", (3,)), ("u", (2, 3)), ("v", (2, 2)), ("s", (1,))]}

    def f(p):
        h = ad.tanh(p["u"] @ p["w"] + p["b"])
        h = ad.concat([h, ad.sigmoid(p["v"])])[:, 1:]
        z = ad.exp(p["s"] * 0.5) * ad.square(h) - h
        probs = ad.softmax(z)
        return ad.log(probs + 0.1).mean() + ad.sub(z, p["s"]).sum()

    errs = check_gradients(f, inputs)
    assert max(errs.values()) < TOL, errs
