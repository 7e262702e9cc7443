"""Finite-difference oracles and graph invariants for the autodiff core."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpdbn import numerics as nm


def fd_grad(f, x, eps=1e-5):
    """Central finite differences of a scalar function, entry by entry."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        hi = x.copy()
        hi[i] += eps
        lo = x.copy()
        lo[i] -= eps
        out[i] = (f(hi) - f(lo)) / (2.0 * eps)
    return out


def check_grads(build, arrays, rtol=1e-5, atol=1e-7, eps=1e-5):
    """Compare reverse-mode gradients of build(*leaves) against FD."""
    leaves = [nm.parameter(a) for a in arrays]
    grads = nm.gradient(build(*leaves), leaves)
    for k in range(len(arrays)):

        def f(x, k=k):
            vals = [np.array(a) for a in arrays]
            vals[k] = x
            return float(build(*[nm.parameter(v) for v in vals]).value)

        np.testing.assert_allclose(
            grads[leaves[k]], fd_grad(f, arrays[k], eps), rtol=rtol, atol=atol
        )


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def weighted(t, w):
    return (t * nm.constant(w)).sum()


class TestElementwise:
    def test_add_sub_mul_div_broadcast(self, rng):
        a = rng.normal(size=(3, 4))
        row = rng.normal(size=(1, 4))
        col = rng.normal(size=(3, 1))
        w = rng.normal(size=(3, 4))
        check_grads(lambda x, y: weighted(x + y, w), [a, row])
        check_grads(lambda x, y: weighted(x - y, w), [a, col])
        check_grads(lambda x, y: weighted(x * y, w), [a, row])
        check_grads(lambda x, y: weighted(x / y, w), [a, 2.0 + np.abs(col)])

    def test_scalar_operands(self, rng):
        a = rng.normal(size=(2, 3))
        w = rng.normal(size=(2, 3))
        check_grads(lambda x: weighted(3.0 * x + 1.0, w), [a])
        check_grads(lambda x: weighted(1.0 - x, w), [a])
        check_grads(lambda x: weighted(2.0 / (x + 4.0), w), [a])

    def test_unary_chain(self, rng):
        a = 0.5 + np.abs(rng.normal(size=(3, 3)))
        w = rng.normal(size=(3, 3))
        check_grads(lambda x: weighted(nm.exp(-x), w), [a])
        check_grads(lambda x: weighted(nm.log(x), w), [a])
        check_grads(lambda x: weighted(nm.sigmoid(x), w), [a])
        check_grads(lambda x: weighted(nm.softplus(x), w), [a])
        check_grads(lambda x: weighted(nm.square(x), w), [a])
        check_grads(lambda x: weighted(nm.sqrt(x), w), [a])

    def test_sigmoid_extreme_inputs_stay_finite(self):
        v = nm.sigmoid(nm.constant(np.array([-800.0, 0.0, 800.0])))
        assert np.all(np.isfinite(v.value))
        assert v.value[0] == 0.0 and v.value[2] == 1.0

    def test_reductions(self, rng):
        a = rng.normal(size=(3, 4))
        w_row = rng.normal(size=(1, 4))
        w_col = rng.normal(size=(3, 1))
        check_grads(lambda x: x.sum(), [a])
        check_grads(lambda x: x.mean(), [a])
        check_grads(lambda x: weighted(x.sum(axis=0, keepdims=True), w_row), [a])
        check_grads(lambda x: weighted(x.mean(axis=1, keepdims=True), w_col), [a])

    def test_clamp_interior_and_masked(self, rng):
        a = np.array([[-2.0, 0.3, 0.9, 2.5]])
        t = nm.parameter(a)
        y = nm.clamp(t, 0.0, 1.0)
        np.testing.assert_allclose(y.value, [[0.0, 0.3, 0.9, 1.0]])
        g = nm.gradient(y.sum(), [t])[t]
        np.testing.assert_allclose(g, [[0.0, 1.0, 1.0, 0.0]])


class TestLinAlg:
    def test_matmul(self, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        w = rng.normal(size=(3, 2))
        check_grads(lambda x, y: weighted(x @ y, w), [a, b])

    def test_matmul_shape_mismatch(self, rng):
        with pytest.raises(nm.NumericsError):
            nm.matmul(nm.constant(np.ones((2, 3))), nm.constant(np.ones((2, 3))))

    def test_transpose(self, rng):
        a = rng.normal(size=(2, 5))
        w = rng.normal(size=(5, 2))
        check_grads(lambda x: weighted(x.T, w), [a])

    def test_take_rows_scatter(self, rng):
        a = rng.normal(size=(5, 3))
        w = rng.normal(size=(4, 3))
        idx = [3, 0, 3, 1]
        check_grads(lambda x: weighted(nm.take_rows(x, idx), w), [a])

    def test_trace_product_value_and_grad(self, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 3))
        val = nm.trace_product(nm.constant(a), nm.constant(b)).item()
        assert abs(val - np.trace(a @ b)) < 1e-12
        check_grads(lambda x, y: nm.trace_product(x, y), [a, b])

    def test_cholesky_grad_via_fd(self, rng):
        m = rng.normal(size=(4, 4))
        w = np.tril(rng.normal(size=(4, 4)))
        check_grads(
            lambda x: weighted(nm.cholesky(x @ x.T + nm.constant(np.eye(4))), w),
            [m],
        )

    def test_chol_solve_value(self, rng):
        m = rng.normal(size=(5, 5))
        k = m @ m.T + 5.0 * np.eye(5)
        b = rng.normal(size=(5, 2))
        x = nm.chol_solve(nm.cholesky(nm.constant(k)), nm.constant(b))
        np.testing.assert_allclose(x.value, np.linalg.solve(k, b), rtol=1e-10)

    def test_chol_solve_grad_via_fd(self, rng):
        m = rng.normal(size=(4, 4))
        b = rng.normal(size=(4, 2))
        w = rng.normal(size=(4, 2))
        check_grads(
            lambda x, y: weighted(
                nm.chol_solve(nm.cholesky(x @ x.T + nm.constant(3.0 * np.eye(4))), y), w
            ),
            [m, b],
        )

    def test_chol_logdet_value(self, rng):
        m = rng.normal(size=(6, 6))
        k = m @ m.T + 4.0 * np.eye(6)
        got = nm.chol_logdet(nm.cholesky(nm.constant(k))).item()
        assert abs(got - np.linalg.slogdet(k)[1]) < 1e-10

    def test_logdet_gradient_is_inverse_after_symmetrizing(self, rng):
        m = rng.normal(size=(5, 5))
        k_val = m @ m.T + 5.0 * np.eye(5)
        k = nm.parameter(k_val)
        obj = nm.chol_logdet(nm.cholesky(k))
        g = nm.gradient(obj, [k])[k]
        np.testing.assert_allclose(0.5 * (g + g.T), np.linalg.inv(k_val), rtol=1e-9, atol=1e-11)

    def test_jitter_factorizes_rank_deficient(self, rng):
        m = rng.normal(size=(6, 2))
        l = nm.cholesky(nm.constant(m @ m.T), jitter=1e-6)
        np.testing.assert_allclose(
            l.value @ l.value.T, m @ m.T + 1e-6 * np.eye(6), atol=1e-10
        )

    def test_factorization_error_reports_pivot(self):
        a = np.diag([1.0, -1.0, 1.0])
        with pytest.raises(nm.FactorizationError) as info:
            nm.cholesky(nm.constant(a))
        assert info.value.pivot == 2


@given(
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(1, 12),
    rank=st.integers(0, 12),
    scale=st.sampled_from([1e-3, 1.0, 1e3]),
)
@settings(max_examples=60, deadline=None)
def test_psd_plus_jitter_always_factorizes(seed, n, rank, scale):
    g = np.random.default_rng(seed)
    b = scale * g.normal(size=(n, min(rank, n)))
    l = nm.cholesky(nm.constant(b @ b.T), jitter=1e-6)
    assert np.all(np.isfinite(l.value))


class TestGraph:
    def test_shared_subexpression_accumulates(self):
        t = nm.parameter(np.array([[3.0]]))
        y = t * t + t * t
        g = nm.gradient(y.sum(), [t])[t]
        np.testing.assert_allclose(g, [[12.0]])

    def test_each_node_backward_fires_once_in_insertion_order(self):
        x = nm.parameter(np.array([[2.0]]))
        a = x * 2.0
        b = x * 3.0
        c = a * b
        d = c + c
        out = d.sum()

        fired = []

        def instrument(node):
            wrapped = []
            for j, vjp in enumerate(node._vjps):
                def run(g, node=node, j=j, vjp=vjp):
                    fired.append((node._idx, j))
                    return vjp(g)
                wrapped.append(run)
            node._vjps = tuple(wrapped)

        seen = set()
        stack = [out]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            instrument(node)
            stack.extend(node._parents)

        g = nm.gradient(out, [x])[x]
        np.testing.assert_allclose(g, [[48.0]])
        assert len(fired) == len(set(fired)), "some vjp fired twice"
        order = [idx for idx, _ in fired]
        assert order == sorted(order, reverse=True), "backward left insertion order"

    def test_unused_parameter_gets_zero_gradient(self):
        used = nm.parameter(np.ones((2, 2)))
        unused = nm.parameter(np.ones((3, 3)))
        g = nm.gradient((used * 2.0).sum(), [used, unused])
        np.testing.assert_allclose(g[unused], np.zeros((3, 3)))

    def test_gradient_requires_scalar(self):
        t = nm.parameter(np.ones((2, 2)))
        with pytest.raises(nm.NumericsError):
            nm.gradient(t * 1.0, [t])


class TestFiniteness:
    def test_log_of_negative_raises(self):
        with pytest.raises(nm.NumericsError):
            nm.log(nm.constant(np.array([-1.0])))

    def test_exp_overflow_raises(self):
        with pytest.raises(nm.NumericsError):
            nm.exp(nm.constant(np.array([1000.0])))

    def test_div_by_zero_raises(self):
        with pytest.raises(nm.NumericsError):
            nm.constant(np.ones(2)) / nm.constant(np.zeros(2))

    def test_nonfinite_backward_raises(self):
        t = nm.parameter(np.array([1e-320]))
        y = nm.log(t).sum()
        with pytest.raises(nm.NumericsError):
            nm.gradient(y, [t])
