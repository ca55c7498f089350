import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vhe import autodiff as ad
from vhe.checks import _op_cases


def grad_of(fn, **params):
    g = ad.Graph(dict(params))
    loss = fn(*(g.param(k) for k in params))
    return g.backward(loss)


# -- forward values


def test_matmul_identity():
    A = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(ad.matmul(np.eye(2), A), A)


def test_tanh_zero():
    assert np.array_equal(ad.tanh(np.zeros((2, 3))), np.zeros((2, 3)))


def test_conv1d_constant_signal():
    # kernels that sum to one over (channel, tap) keep a constant signal
    # constant away from the zero-padded borders
    x = np.full((2, 5), 3.0)
    w = np.random.default_rng(0).random((4, 2, 3))
    w /= w.sum(axis=(1, 2), keepdims=True)
    y = ad.conv1d(x, w)
    assert y.shape == (4, 5)
    assert np.allclose(y[:, 1:4], 3.0)


def test_conv1d_loop_oracle(rng):
    x = rng.normal(size=(3, 7))
    w = rng.normal(size=(2, 3, 5))
    ref = np.zeros((2, 7))
    pad = np.pad(x, ((0, 0), (2, 2)))
    for k in range(2):
        for p in range(7):
            ref[k, p] = (w[k] * pad[:, p : p + 5]).sum()
    assert np.allclose(ad.conv1d(x, w), ref)


def test_masked_softmax_ignores_masked(rng):
    a = rng.normal(size=(2, 5))
    mask = np.array([[1, 1, 0, 0, 1], [0, 1, 0, 0, 0]], dtype=bool)
    s = ad.masked_softmax(a, mask)
    assert np.allclose(s.sum(axis=1), 1.0)
    assert np.all(s[~mask] == 0)
    assert s[1, 1] == 1.0


def test_masked_max_loop_oracle(rng):
    a = rng.normal(size=(3, 5))
    mask = rng.random((3, 5)) < 0.6
    mask[:, 0] = True
    got = ad.masked_max(a, mask, axis=-1)
    ref = [a[r][mask[r]].max() for r in range(3)]
    assert np.allclose(got, ref)


# -- gradients


def test_sum_gradient_ones():
    x = np.random.default_rng(0).normal(size=(3, 2))
    assert np.array_equal(grad_of(lambda t: ad.sum(t), x=x)["x"], np.ones((3, 2)))


def test_square_norm_gradient():
    x = np.random.default_rng(1).normal(size=5)
    assert np.allclose(grad_of(lambda t: ad.sum(ad.square(t)), x=x)["x"], 2 * x)


def test_detach_blocks_gradient():
    x = np.array([1.0, 2.0])
    g = grad_of(lambda t: ad.sum(ad.detach(t) * t), x=x)["x"]
    assert np.allclose(g, x)  # only the non-detached factor contributes


def test_reused_node_accumulates():
    x = np.array([0.3, -1.2])
    g = grad_of(lambda t: ad.sum(t * t + t), x=x)["x"]
    assert np.allclose(g, 2 * x + 1)


def test_unreached_param_has_zero_grad():
    g = ad.Graph({"a": np.ones(2), "b": np.ones(3)})
    loss = ad.sum(g.param("a"))
    g.param("b")
    grads = g.backward(loss)
    assert np.array_equal(grads["b"], np.zeros(3))


def test_broadcast_gradient_reduces():
    g = grad_of(lambda a, b: ad.sum(a * b), a=np.ones((4, 3)), b=np.arange(3.0))
    assert g["b"].shape == (3,)
    assert np.allclose(g["b"], 4.0)


@pytest.mark.parametrize("case", _op_cases(np.random.default_rng(7)), ids=lambda c: c[0])
def test_op_gradients(case):
    _, params, builder = case
    rep = ad.check_gradients(builder, params, tolerance=1e-4)
    assert rep.passed, rep.lines()


def test_random_composite_graph(rng):
    params = {
        "x": rng.normal(size=(2, 3, 6)),
        "k": rng.normal(size=(4, 3, 3)) * 0.3,
        "W": rng.normal(size=(6, 5)),
        "e": rng.normal(size=(9, 6)),
    }
    mask = np.array([[1, 1, 1, 0, 1, 1], [1, 0, 1, 1, 1, 1]], dtype=bool)

    def build(g):
        x, k, W, e = (g.param(n) for n in "xkWe")
        c = ad.tanh(ad.conv1d(x, k))  # (2, 4, 6)
        m = ad.masked_max(c, axis=-2)  # (2, 6)
        s = ad.masked_softmax(m, mask)
        rows = ad.gather(e, np.array([[1, 4], [2, 2]]))  # (2, 2, 6)
        h = ad.matmul(ad.swapaxes(rows, -1, -2), ad.reshape(s[:, :2], (2, 2, 1)))
        z = ad.concat([ad.reshape(h, (2, 6)), s], axis=1)
        out = ad.sigmoid(ad.matmul(z[:, :6], W)) + ad.exp(-ad.square(z[:, 6:7]))
        return ad.mean(ad.log(1.0 + out)) - ad.sum(ad.sqrt(1.0 + ad.square(s))) / 3.0

    rep = ad.check_gradients(build, params, tolerance=1e-4, h=1e-5)
    assert rep.passed, rep.lines()


def test_linear_regression_gradcheck_tight(rng):
    X = rng.normal(size=(20, 3))
    y = rng.normal(size=20)
    params = {"w": rng.normal(size=3), "b": np.array([0.1])}

    def build(g):
        r = ad.matmul(X, ad.reshape(g.param("w"), (3, 1)))[:, 0] + g.param("b") - y
        return ad.mean(ad.square(r))

    rep = ad.check_gradients(build, params, tolerance=1e-6)
    assert rep.passed, rep.lines()


def test_corrupted_backward_is_caught(monkeypatch):
    op = ad.OPS["tanh"]
    monkeypatch.setitem(ad.OPS, "tanh", ad.Op(op.forward, lambda g, ins, out, ctx: [g * (1 - out)]))
    params = {"x": np.array([0.4, -0.9, 1.3])}
    rep = ad.check_gradients(lambda g: ad.sum(ad.tanh(g.param("x"))), params)
    assert not rep.passed
    assert "FAIL" in rep.lines()[0]


# -- errors


def test_non_finite_raises():
    g = ad.Graph({"x": np.array([-1.0])})
    with pytest.raises(ad.NonFiniteError):
        ad.log(g.param("x"))


def test_non_scalar_loss_raises():
    g = ad.Graph({"x": np.ones(3)})
    with pytest.raises(ad.ShapeError):
        g.backward(g.param("x") * 2.0)


def test_matmul_shape_error():
    with pytest.raises(ad.ShapeError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


# -- properties


small = arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=st.floats(-3, 3))


@given(small)
def test_plain_arrays_match_tensor_forward(x):
    g = ad.Graph({"x": x})
    t = ad.tanh(g.param("x")) * 2.0 + ad.square(g.param("x"))
    assert np.array_equal(t.value, ad.tanh(x) * 2.0 + ad.square(x))


@given(small, st.floats(-2, 2))
def test_linearity_of_gradient(x, c):
    g1 = grad_of(lambda t: ad.sum(ad.tanh(t)) * c, x=x)["x"]
    g2 = grad_of(lambda t: ad.sum(ad.tanh(t)), x=x)["x"]
    assert np.allclose(g1, c * g2)
