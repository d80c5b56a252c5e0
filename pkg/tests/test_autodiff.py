import numpy as np
import pytest
from hypothesis import given, strategies as st

from layoutgen import autodiff as ad
from layoutgen.errors import DimensionError, UnsupportedOperationError


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def check(build, *shapes, seed=0, tol=1e-6):
    rng = np.random.default_rng(seed)
    values = [rng.normal(size=s) for s in shapes]
    params = [ad.param(f"p{i}", v) for i, v in enumerate(values)]
    grads = ad.backward(build(*params), params)
    for i, v in enumerate(values):
        def f(x, i=i):
            args = [ad.const(x) if j == i else ad.const(values[j]) for j in range(len(values))]
            return float(build(*args).value)
        num = fd_grad(f, v)
        err = np.abs(num - grads[f"p{i}"]).max() / max(1e-8, np.abs(num).max())
        assert err < tol, (i, err)


def test_elementwise_ops():
    check(lambda a, b: ad.sum(ad.mul(ad.add(a, b), ad.sub(a, b))), (3, 4), (3, 4))


def test_broadcast_add_and_mul():
    check(lambda a, b: ad.mean(a * b + b), (3, 4), (4,))


def test_matmul_batched_left():
    check(lambda a, b: ad.sum(ad.tanh(a @ b)), (2, 3, 4), (4, 5))


@pytest.mark.parametrize("name", sorted(ad.NONLINEARITIES))
def test_nonlinearities(name):
    check(lambda a: ad.sum(ad.NONLINEARITIES[name](a) * a), (5, 3))


def test_softmax_rows_grad():
    w = np.random.default_rng(1).normal(size=(3, 4))
    check(lambda a: ad.sum(ad.softmax_rows(a) * w), (3, 4))


@pytest.mark.parametrize("heads", [1, 2])
def test_attention_grad_with_mask(heads):
    mask = np.array([[True, False, True], [True, True, False]])
    check(lambda q, k, v: ad.sum(ad.tanh(ad.attention(q, k, v, mask, heads))), (2, 4), (3, 4), (3, 4))


def test_gather_scatter_grad():
    idx = np.array([[0, 2, 2], [3, 1, 0]])
    valid = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
    w = np.random.default_rng(2).normal(size=(5, 2))

    def build(x):
        g = ad.gather(x, idx, valid)
        return ad.sum(ad.scatter(g, np.array([0, 1, 4, 5]), np.array([4, 4, 0, 1]), 5) * w)

    check(build, (4, 2))


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 1000))
def test_mean_grad_is_uniform(r, c, seed):
    x = ad.param("x", np.random.default_rng(seed).normal(size=(r, c)))
    g = ad.backward(ad.mean(x), [x])["x"]
    assert np.allclose(g, 1.0 / (r * c))


def test_unreachable_param_gets_zero_grad():
    a, b = ad.param("a", np.ones(3)), ad.param("b", np.ones(2))
    g = ad.backward(ad.sum(a * a), {"a": a, "b": b})
    assert np.array_equal(g["b"], np.zeros(2))
    assert np.array_equal(g["a"], np.full(3, 2.0))


def test_unsupported_operation_raises():
    x = ad.param("x", np.ones(2))
    bogus = ad.Var(np.exp(x.value), "exp", (x,), lambda g: (g,))
    with pytest.raises(UnsupportedOperationError, match="exp"):
        ad.backward(ad.sum(bogus), [x])


def test_non_scalar_loss_rejected():
    x = ad.param("x", np.ones(2))
    with pytest.raises(DimensionError):
        ad.backward(x * 2.0, [x])


def test_shared_subexpression_accumulates():
    x = ad.param("x", np.array([3.0]))
    y = x * x
    g = ad.backward(ad.sum(y + y), [x])["x"]
    assert np.allclose(g, [12.0])
