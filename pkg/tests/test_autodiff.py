import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from east.autodiff import Tensor, concat, elementwise, finite_diff_gradient, matmul, mean_pool_time, no_grad
from east.errors import DimensionMismatch, NonFiniteValue


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def grad_of(fn, x):
    t = Tensor(x, requires_grad=True)
    fn(t).backward()
    return t.grad


def test_matmul_examples():
    eye = Tensor(np.eye(2))
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(eye, m).data, m)
    np.testing.assert_array_equal(matmul([[1.0, 0.0]], [[5.0], [7.0]]).data, [[5.0]])
    np.testing.assert_array_equal(matmul(m, [[5.0, 6.0], [7.0, 8.0]]).data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_shape_error():
    with pytest.raises(DimensionMismatch):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_elementwise_examples():
    np.testing.assert_array_equal(elementwise("relu", [-1.0, 0.0, 2.0]).data, [0.0, 0.0, 2.0])
    assert elementwise("sigmoid", 0.0).item() == 0.5
    np.testing.assert_array_equal(elementwise("scale", [1.0, 2.0, 3.0], 2).data, [2.0, 4.0, 6.0])
    with pytest.raises(DimensionMismatch):
        elementwise("add", np.ones(3), np.ones(2))


def test_relu_subgradient_at_zero():
    g = grad_of(lambda t: t.relu().sum(), np.array([-1.0, 0.0, 1.0]))
    np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])


def test_finite_diff_examples():
    g = finite_diff_gradient(lambda x: float(x[0] ** 2), np.array([3.0]), 1e-5)
    assert abs(g[0] - 6.0) < 1e-8
    x = np.random.default_rng(0).standard_normal((3, 4))
    np.testing.assert_allclose(finite_diff_gradient(lambda v: v.sum(), x, 1e-5), np.ones((3, 4)), atol=1e-9)


def test_finite_diff_rejects_nonfinite():
    with pytest.raises(NonFiniteValue):
        finite_diff_gradient(lambda x: float(np.log(x[0])), np.array([0.0]), 1e-5)


def _away_from_zero(rng, shape, gap=1e-3):
    x = rng.uniform(-2, 2, size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-300) * gap * 2, x)


UNARY = {
    "relu": lambda t: t.relu(),
    "sigmoid": lambda t: t.sigmoid(),
    "softplus": lambda t: t.softplus(),
    "exp": lambda t: t.exp(),
    "abs": lambda t: t.abs(),
    "square": lambda t: t ** 2,
    "neg": lambda t: -t,
}


@pytest.mark.parametrize("name", sorted(UNARY))
@pytest.mark.parametrize("seed", range(5))
def test_unary_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    x = _away_from_zero(rng, (3, 4))
    w = rng.standard_normal((3, 4))
    op = UNARY[name]
    analytic = grad_of(lambda t: (op(t) * w).sum(), x)
    numeric = finite_diff_gradient(lambda v: float((op(Tensor(v)).data * w).sum()), x, 1e-5)
    assert rel_err(analytic, numeric) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_positive_domain_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.5, 2.0, size=(4, 3))
    for op in (lambda t: t.sqrt(), lambda t: t.log(), lambda t: 1.0 / t):
        analytic = grad_of(lambda t: op(t).sum(), x)
        numeric = finite_diff_gradient(lambda v: float(op(Tensor(v)).data.sum()), x, 1e-5)
        assert rel_err(analytic, numeric) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_binary_and_matmul_gradients(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-2, 2, (2, 3, 4))
    b = rng.uniform(-2, 2, (4, 5))
    bias = rng.uniform(-2, 2, 5)

    def f(ta, tb, tbias):
        return ((ta @ tb + tbias) * (ta @ tb - tbias)).mean()

    ta, tb, tbias = (Tensor(v, requires_grad=True) for v in (a, b, bias))
    f(ta, tb, tbias).backward()
    assert rel_err(ta.grad, finite_diff_gradient(lambda v: f(Tensor(v), Tensor(b), Tensor(bias)).item(), a)) < 1e-4
    assert rel_err(tb.grad, finite_diff_gradient(lambda v: f(Tensor(a), Tensor(v), Tensor(bias)).item(), b)) < 1e-4
    assert rel_err(tbias.grad, finite_diff_gradient(lambda v: f(Tensor(a), Tensor(b), Tensor(v)).item(), bias)) < 1e-4


def test_batched_matmul_gradient():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((3, 2, 4))
    b = rng.standard_normal((3, 4, 2))
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    (ta @ tb).sum().backward()
    assert rel_err(tb.grad, finite_diff_gradient(lambda v: float((a @ v).sum()), b)) < 1e-6


@pytest.mark.parametrize("frames,factor", [(8, 2), (7, 3), (5, 5), (4, 1), (3, 4)])
def test_mean_pool_time(frames, factor):
    rng = np.random.default_rng(frames * 10 + factor)
    x = rng.standard_normal((2, frames, 3))
    out = mean_pool_time(Tensor(x), factor)
    assert out.shape == (2, -(-frames // factor), 3)
    np.testing.assert_allclose(out.data[:, 0], x[:, :factor].mean(axis=1))
    np.testing.assert_allclose(out.data[:, -1], x[:, (out.shape[1] - 1) * factor:].mean(axis=1))
    w = rng.standard_normal(out.shape)
    analytic = grad_of(lambda t: (mean_pool_time(t, factor) * w).sum(), x)
    numeric = finite_diff_gradient(lambda v: float((mean_pool_time(Tensor(v), factor).data * w).sum()), x)
    assert rel_err(analytic, numeric) < 1e-6


def test_take_accumulates_repeated_indices():
    x = np.arange(6.0).reshape(1, 3, 2)
    g = grad_of(lambda t: t.take([0, 0, 1, 2], axis=1).sum(), x)
    np.testing.assert_array_equal(g[0, :, 0], [2.0, 1.0, 1.0])


def test_reductions_and_shapes():
    x = np.random.default_rng(1).standard_normal((2, 3, 4))
    for fn in (lambda t: t.sum(axis=1), lambda t: t.mean(axis=(0, 2)), lambda t: t.swapaxes(0, 1).reshape(3, 8)[:, :2],
               lambda t: concat([t[0], t[1]], axis=1)[:, :2]):
        analytic = grad_of(lambda t: (fn(t) * Tensor(np.ones(fn(Tensor(x)).shape))).sum(), x)
        numeric = finite_diff_gradient(lambda v: float(fn(Tensor(v)).data.sum()), x)
        assert rel_err(analytic, numeric) < 1e-6


def test_gradient_of_sum_is_sum_of_gradients():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(5)
    f = lambda t: (t * t).sum()  # noqa: E731
    g = lambda t: t.sigmoid().sum()  # noqa: E731
    np.testing.assert_allclose(grad_of(lambda t: f(t) + g(t), x), grad_of(f, x) + grad_of(g, x), rtol=1e-14)


def test_shared_node_gradient_accumulates():
    t = Tensor(np.array([2.0]), requires_grad=True)
    y = t * t
    (y + y).sum().backward()
    np.testing.assert_array_equal(t.grad, [8.0])


def test_no_grad_records_nothing():
    t = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = (t * 2.0).sum()
    assert not out.requires_grad


def test_backward_is_bit_deterministic():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((16, 8))
    w = rng.standard_normal((8, 4))
    grads = []
    for _ in range(2):
        tw = Tensor(w, requires_grad=True)
        ((Tensor(x) @ tw).relu().softplus()).mean().backward()
        grads.append(tw.grad.tobytes())
    assert grads[0] == grads[1]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
def test_matmul_associativity(m, n, p, q, seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.standard_normal((m, n)), rng.standard_normal((n, p)), rng.standard_normal((p, q))
    left = matmul(matmul(a, b), c).data
    right = matmul(a, matmul(b, c)).data
    assert np.max(np.abs(left - right)) <= 1e-10 * max(1.0, np.max(np.abs(left)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_finite_inputs_give_finite_outputs(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-50, 50, (4, 3)), requires_grad=True)
    out = (x.sigmoid() + x.softplus() + x.relu() + x.abs()).sum()
    out.backward()
    assert np.isfinite(out.item()) and np.all(np.isfinite(x.grad))
