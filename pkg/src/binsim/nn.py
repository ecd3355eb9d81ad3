"""Small dense-tensor autodiff engine and the Adam optimizer.

Tensors are float64 numpy arrays of rank <= 2 that remember how they were
computed. Calling ``backward()`` on a scalar result walks the graph in reverse
topological order and accumulates (``+=``) gradients into every tensor that
requires one, so a parameter used twice (the siamese twins) receives the sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    """Raised when an op receives incompatible operand shapes."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        desc = " vs ".join(str(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


class NumericalError(ArithmeticError):
    """Raised when an op produces NaN/Inf or hits a degenerate input."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError("tensor", arr.shape)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape)
        return float(self.data.reshape(-1)[0])

    def backward(self) -> None:
        """Back-propagate from this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise ShapeError("backward", self.shape)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and _needs_grad(p):
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(op: str, data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"{op}: non-finite output")
    out = Tensor(data)
    if any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    """``a @ b`` for 2-D/1-D operands (covers matvec and row-vector products)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 0 or b.data.ndim == 0 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    A, B = a.data, b.data

    def backward(g):
        if B.ndim == 1:
            ga = np.outer(g, B) if A.ndim == 2 else g * B
            gb = A.T @ g if A.ndim == 2 else g * A
        elif A.ndim == 1:
            ga = B @ g
            gb = np.outer(A, g)
        else:
            ga = g @ B.T
            gb = A.T @ g
        return ga, gb

    return _result("matmul", A @ B, (a, b), backward)


matvec = matmul
weighted_sum = matmul  # w @ X: sum_j w[j] * X[j]


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _result("transpose", a.data.T, (a,), lambda g: (g.T,))


def spmm(S: sp.spmatrix, a) -> Tensor:
    """Constant sparse matrix times tensor."""
    a = as_tensor(a)
    if S.shape[1] != a.shape[0]:
        raise ShapeError("spmm", S.shape, a.shape)
    St = S.T.tocsr()
    return _result("spmm", np.asarray(S @ a.data), (a,), lambda g: (np.asarray(St @ g),))


def take(a, index) -> Tensor:
    """Gather rows ``a[index]``; gradient scatters back with accumulation."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.intp)
    if idx.size and (idx.min() < -a.shape[0] or idx.max() >= a.shape[0]):
        raise ShapeError("take", a.shape, idx.shape)

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _result("take", a.data[idx], (a,), backward)


# -- elementwise --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _result(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _result(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    A, B = a.data, b.data
    return _result(
        "mul",
        A * B,
        (a, b),
        lambda g: (_unbroadcast(g * B, a.shape), _unbroadcast(g * A, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    A, B = a.data, b.data
    if np.any(B == 0.0):
        raise NumericalError("div: zero denominator")
    q = A / B
    return _result(
        "div",
        q,
        (a, b),
        lambda g: (_unbroadcast(g / B, a.shape), _unbroadcast(-g * q / B, b.shape)),
    )


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _result("scale", a.data * c, (a,), lambda g: (g * c,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _result("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a) -> Tensor:
    # derivative at exactly 0 is taken as 0
    a = as_tensor(a)
    mask = a.data > 0.0
    return _result("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sum_rows(a) -> Tensor:
    """Sum over the row axis, keeping a (1, n) row."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("sum_rows", a.shape)
    n = a.shape[0]
    return _result(
        "sum_rows",
        a.data.sum(axis=0, keepdims=True),
        (a,),
        lambda g: (np.repeat(g, n, axis=0),),
    )


# -- similarity / loss ------------------------------------------------------


def cosine(a, b) -> Tensor:
    """Cosine similarity along the last axis (vectors -> scalar, matrices -> per row)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.data.ndim == 0:
        raise ShapeError("cosine", a.shape, b.shape)
    A, B = a.data, b.data
    sa = np.sum(A * A, axis=-1, keepdims=True)
    sb = np.sum(B * B, axis=-1, keepdims=True)
    if np.any(sa == 0.0) or np.any(sb == 0.0):
        raise NumericalError("cosine: zero-norm vector")
    na, nb = np.sqrt(sa), np.sqrt(sb)
    dot = np.sum(A * B, axis=-1, keepdims=True)
    # sqrt(s * s) == s exactly, so identical inputs give exactly 1
    c = dot / np.sqrt(sa * sb)

    def backward(g):
        gk = np.asarray(g)[..., None]
        ga = gk * (B / (na * nb) - c * A / (na * na))
        gb = gk * (A / (na * nb) - c * B / (nb * nb))
        return ga, gb

    return _result("cosine", c[..., 0], (a, b), backward)


def squared_error(pred, target) -> Tensor:
    """Sum of squared residuals as a scalar."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError("squared_error", pred.shape, target.shape)
    r = pred.data - target.data
    return _result(
        "squared_error",
        np.asarray(np.sum(r * r)),
        (pred, target),
        lambda g: (2.0 * g * r, -2.0 * g * r),
    )


# -- optimisation -------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> Sequence[np.ndarray]:
    """Bias-corrected Adam update applied in place to ``params``.

    All gradients are validated before anything is mutated, so a non-finite
    gradient leaves parameters and moments untouched.
    """
    if len(params) != len(grads):
        raise ShapeError("adam_step", (len(params),), (len(grads),))
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError("adam_step", p.shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise NumericalError("adam_step: non-finite gradient")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for p, m in zip(params, state.m):
        if p.shape != m.shape:
            raise ShapeError("adam_step", p.shape, m.shape)

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def grad_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    theta: np.ndarray,
    eps: float = 1e-6,
    skip: Callable[[np.ndarray], bool] | None = None,
    order: int = 2,
) -> float:
    """Max relative error between ``f``'s analytic gradient and central differences.

    ``f(theta)`` returns ``(value, gradient)``. The relative error per
    coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``. ``order=4`` uses the
    five-point stencil, whose smaller truncation error allows a larger
    ``eps`` and so less roundoff on tiny gradients. Non-differentiable points
    (e.g. a relu kink) are the caller's job: pass ``skip`` to reject a
    perturbed ``theta`` and that coordinate is left out.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    theta = np.array(theta, dtype=np.float64)
    _, analytic = f(theta.copy())
    analytic = np.asarray(analytic, dtype=np.float64).reshape(theta.shape)
    worst = 0.0
    flat = theta.reshape(-1)
    a_flat = analytic.reshape(-1)
    steps = (1.0, -1.0) if order == 2 else (1.0, -1.0, 2.0, -2.0)
    for i in range(flat.size):
        points = []
        for k in steps:
            q = flat.copy()
            q[i] += k * eps
            points.append(q.reshape(theta.shape))
        if skip is not None and any(skip(q) for q in points):
            continue
        vals = [f(q)[0] for q in points]
        if order == 2:
            numeric = (vals[0] - vals[1]) / (2.0 * eps)
        else:
            numeric = (8.0 * (vals[0] - vals[1]) - (vals[2] - vals[3])) / (12.0 * eps)
        denom = max(abs(a_flat[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(a_flat[i] - numeric) / denom)
    return worst


def check_tensor_grads(
    loss_fn: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-6, order: int = 2
) -> float:
    """Run :func:`grad_check` jointly over a set of parameter tensors.

    ``loss_fn`` rebuilds the graph from the current parameter values; the
    parameters are perturbed in place and restored afterwards.
    """
    params = list(params)
    sizes = [p.data.size for p in params]
    saved = [p.data.copy() for p in params]

    def load(theta):
        off = 0
        for p, n in zip(params, sizes):
            p.data[...] = theta[off : off + n].reshape(p.shape)
            off += n

    def f(theta):
        load(theta)
        for p in params:
            p.zero_grad()
        loss = loss_fn()
        loss.backward()
        grad = np.concatenate([p.grad.reshape(-1) for p in params])
        return loss.item(), grad

    theta0 = np.concatenate([p.data.reshape(-1) for p in params])
    try:
        return grad_check(f, theta0, eps=eps, order=order)
    finally:
        for p, s in zip(params, saved):
            p.data[...] = s
            p.zero_grad()
