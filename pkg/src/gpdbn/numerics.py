"""Reverse-mode automatic differentiation over float64 arrays.

The computation graph is dynamic: every operation appends a node holding
the forward value, its parent nodes and one vector-Jacobian closure per
parent.  Reverse insertion order is a valid topological order (operands
always exist before the node consuming them), so the backward pass walks
nodes by descending creation index and visits each node exactly once.
Graphs are rebuilt from the leaves on every objective evaluation; only
leaf values persist between iterations, and the training loop mutates
those in place between graph builds.

Every primitive checks its forward value for NaN/Inf and raises
NumericsError on the spot, so a bad value surfaces at the op that
produced it rather than three modules later.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.linalg import cho_solve as _cho_solve, solve_triangular as _solve_tri

__all__ = [
    "NumericsError",
    "FactorizationError",
    "Tensor",
    "constant",
    "parameter",
    "matmul",
    "exp",
    "log",
    "sigmoid",
    "softplus",
    "square",
    "sqrt",
    "clamp",
    "take_rows",
    "cholesky",
    "chol_solve",
    "chol_logdet",
    "trace_product",
    "gradient",
]

_insertion_counter = itertools.count()


class NumericsError(RuntimeError):
    """A primitive produced a non-finite value or was fed impossible shapes."""


class FactorizationError(NumericsError):
    """Cholesky factorization hit a non-positive pivot."""

    def __init__(self, pivot: int):
        super().__init__(f"matrix is not positive definite (leading minor {pivot})")
        self.pivot = pivot


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _checked(value: np.ndarray, op: str) -> np.ndarray:
    # Overflow is reported through this exception, not a numpy warning.
    if not np.all(np.isfinite(value)):
        raise NumericsError(f"non-finite value produced by op '{op}'")
    return value


class Tensor:
    """One node of the dynamic graph: a value plus backward closures."""

    __slots__ = ("value", "requires_grad", "_parents", "_vjps", "_idx", "_op")

    def __init__(self, value, requires_grad=False, parents=(), vjps=(), op="leaf"):
        self.value = _as_array(value)
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._vjps = tuple(vjps)
        self._idx = next(_insertion_counter)
        self._op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.value.size != 1:
            raise NumericsError(f"item() needs a single value, got shape {self.value.shape}")
        return float(self.value.reshape(()))

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return _reduce(self, np.sum, None, axis, keepdims, "sum")

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        count = self.value.size if axis is None else self.value.shape[axis]
        return _reduce(self, np.mean, count, axis, keepdims, "mean")

    def __repr__(self) -> str:
        return f"Tensor(op={self._op!r}, shape={self.value.shape})"

    def __add__(self, other):
        return _binary(self, other, np.add, "add", lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(
            self, other, np.subtract, "sub", lambda g, a, b: g, lambda g, a, b: -g
        )

    def __rsub__(self, other):
        return _wrap(other) - self

    def __mul__(self, other):
        return _binary(
            self, other, np.multiply, "mul", lambda g, a, b: g * b, lambda g, a, b: g * a
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(
            self,
            other,
            np.divide,
            "div",
            lambda g, a, b: g / b,
            lambda g, a, b: -g * a / (b * b),
        )

    def __rtruediv__(self, other):
        return _wrap(other) / self

    def __neg__(self):
        return _unary(self, np.negative, "neg", lambda g, x, v: -g)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else constant(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _binary(a, b, fn, op, vjp_a, vjp_b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    with np.errstate(all="ignore"):
        value = _checked(fn(a.value, b.value), op)
    av, bv = a.value, b.value
    vjps = (
        lambda g: _unbroadcast(vjp_a(g, av, bv), av.shape),
        lambda g: _unbroadcast(vjp_b(g, av, bv), bv.shape),
    )
    return Tensor(
        value,
        requires_grad=a.requires_grad or b.requires_grad,
        parents=(a, b),
        vjps=vjps,
        op=op,
    )


def _unary(t, fn, op, vjp) -> Tensor:
    t = _wrap(t)
    with np.errstate(all="ignore"):
        value = _checked(fn(t.value), op)
    tv = t.value
    return Tensor(
        value,
        requires_grad=t.requires_grad,
        parents=(t,),
        vjps=(lambda g: vjp(g, tv, value),),
        op=op,
    )


def _reduce(t, fn, count, axis, keepdims, op) -> Tensor:
    value = _checked(fn(t.value, axis=axis, keepdims=keepdims), op)
    shape = t.value.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        out = np.broadcast_to(g, shape).copy()
        return out if count is None else out / count

    return Tensor(value, requires_grad=t.requires_grad, parents=(t,), vjps=(vjp,), op=op)


def transpose(t: Tensor) -> Tensor:
    return _unary(t, np.transpose, "transpose", lambda g, x, v: g.T)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.value.shape[-1] != b.value.shape[0]:
        raise NumericsError(
            f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}"
        )
    value = _checked(a.value @ b.value, "matmul")
    av, bv = a.value, b.value
    vjps = (lambda g: g @ bv.T, lambda g: av.T @ g)
    return Tensor(
        value,
        requires_grad=a.requires_grad or b.requires_grad,
        parents=(a, b),
        vjps=vjps,
        op="matmul",
    )


def exp(t: Tensor) -> Tensor:
    return _unary(t, np.exp, "exp", lambda g, x, v: g * v)


def log(t: Tensor) -> Tensor:
    return _unary(t, np.log, "log", lambda g, x, v: g / x)


def _expit(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(t: Tensor) -> Tensor:
    return _unary(t, _expit, "sigmoid", lambda g, x, v: g * v * (1.0 - v))


def softplus(t: Tensor) -> Tensor:
    return _unary(
        t,
        lambda x: np.logaddexp(0.0, x),
        "softplus",
        lambda g, x, v: g * _expit(x),
    )


def square(t: Tensor) -> Tensor:
    return _unary(t, np.square, "square", lambda g, x, v: g * 2.0 * x)


def sqrt(t: Tensor) -> Tensor:
    return _unary(t, np.sqrt, "sqrt", lambda g, x, v: g * 0.5 / v)


def clamp(t: Tensor, lo=None, hi=None) -> Tensor:
    t = _wrap(t)
    value = _checked(np.clip(t.value, lo, hi), "clamp")
    tv = t.value
    # Gradient passes only where the input sat strictly inside the bounds.
    def vjp(g):
        mask = np.ones_like(tv)
        if lo is not None:
            mask = mask * (tv >= lo)
        if hi is not None:
            mask = mask * (tv <= hi)
        return g * mask

    return Tensor(value, requires_grad=t.requires_grad, parents=(t,), vjps=(vjp,), op="clamp")


def take_rows(t: Tensor, indices) -> Tensor:
    """Row-subset a matrix; gradients scatter-add back into place."""
    t = _wrap(t)
    idx = np.asarray(indices, dtype=np.intp)
    value = _checked(t.value[idx], "take_rows")
    shape = t.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return Tensor(value, requires_grad=t.requires_grad, parents=(t,), vjps=(vjp,), op="take_rows")


def _failing_pivot(a: np.ndarray) -> int:
    """Smallest k whose leading k-by-k minor is not positive definite."""
    lo, hi = 1, a.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        try:
            np.linalg.cholesky(a[:mid, :mid])
            lo = mid + 1
        except np.linalg.LinAlgError:
            hi = mid
    return lo


def cholesky(t: Tensor, jitter: float = 0.0) -> Tensor:
    """Lower-triangular factor of ``t + jitter * I``.

    Backward follows the standard reverse-mode rule for the Cholesky map:
    with P = tril-with-halved-diagonal of (L^T Lbar), the cotangent of the
    input is L^{-T} P L^{-1}.  That cotangent is exact for symmetric
    perturbations, which is the only way a Gram matrix is ever perturbed.
    """
    t = _wrap(t)
    a = t.value
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NumericsError(f"cholesky needs a square matrix, got {a.shape}")
    if jitter:
        a = a + jitter * np.eye(a.shape[0])
    try:
        l = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise FactorizationError(_failing_pivot(a)) from None
    _checked(l, "cholesky")

    def vjp(g):
        p = l.T @ np.tril(g)
        p = np.tril(p) - 0.5 * np.diag(np.diag(p))
        x = _solve_tri(l, p, lower=True, trans="T")
        return _solve_tri(l, x.T, lower=True, trans="T").T

    return Tensor(l, requires_grad=t.requires_grad, parents=(t,), vjps=(vjp,), op="cholesky")


def chol_solve(l: Tensor, b: Tensor) -> Tensor:
    """Solve (L L^T) x = b given the lower factor L."""
    l, b = _wrap(l), _wrap(b)
    if l.value.shape[0] != b.value.shape[0]:
        raise NumericsError(
            f"chol_solve shape mismatch: {l.value.shape} vs {b.value.shape}"
        )
    x = _checked(_cho_solve((l.value, True), b.value), "chol_solve")
    lv = l.value

    def vjp_l(g):
        s = _cho_solve((lv, True), g)
        return np.tril(-(s @ x.T + x @ s.T) @ lv)

    def vjp_b(g):
        return _cho_solve((lv, True), g)

    return Tensor(
        x,
        requires_grad=l.requires_grad or b.requires_grad,
        parents=(l, b),
        vjps=(vjp_l, vjp_b),
        op="chol_solve",
    )


def chol_logdet(l: Tensor) -> Tensor:
    """log det(L L^T) = 2 * sum(log diag(L))."""
    l = _wrap(l)
    d = np.diag(l.value)
    value = _checked(2.0 * np.sum(np.log(d)), "chol_logdet")

    def vjp(g):
        out = np.zeros_like(l.value)
        np.fill_diagonal(out, 2.0 * g / d)
        return out

    return Tensor(value, requires_grad=l.requires_grad, parents=(l,), vjps=(vjp,), op="chol_logdet")


def trace_product(a: Tensor, b: Tensor) -> Tensor:
    """tr(A @ B) without forming the product."""
    a, b = _wrap(a), _wrap(b)
    value = _checked(np.sum(a.value * b.value.T), "trace_product")
    av, bv = a.value, b.value
    vjps = (lambda g: g * bv.T, lambda g: g * av.T)
    return Tensor(
        value,
        requires_grad=a.requires_grad or b.requires_grad,
        parents=(a, b),
        vjps=vjps,
        op="trace_product",
    )


def gradient(objective: Tensor, params) -> dict[Tensor, np.ndarray]:
    """Backpropagate from a scalar objective to the given leaf tensors.

    Returns a mapping keyed by parameter identity; parameters the
    objective never touched map to zero arrays.
    """
    if objective.value.size != 1:
        raise NumericsError(f"objective must be scalar, got shape {objective.value.shape}")
    params = list(params)

    nodes = []
    seen = set()
    stack = [objective]
    while stack:
        node = stack.pop()
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        nodes.append(node)
        stack.extend(node._parents)
    nodes.sort(key=lambda n: n._idx, reverse=True)

    grads: dict[int, np.ndarray] = {id(objective): np.ones_like(objective.value)}
    for node in nodes:
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node._parents, node._vjps):
            if not parent.requires_grad:
                continue
            with np.errstate(all="ignore"):
                piece = vjp(g)
            if not np.all(np.isfinite(piece)):
                raise NumericsError(f"non-finite gradient from op '{node._op}'")
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + piece
            else:
                grads[key] = piece

    return {p: grads.get(id(p), np.zeros_like(p.value)) for p in params}
