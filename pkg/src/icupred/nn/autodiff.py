"""Reverse-mode automatic differentiation over dense float64 arrays.

Ops build the graph eagerly and attach a backward closure to each result.
Calling ``backward()`` on a scalar accumulates gradients into every upstream
tensor with ``requires_grad`` set. Graphs are single-use: build, backward,
drop. Everything here is pure given (inputs, parameters), so concurrent
forward passes on disjoint graphs are safe.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ShapeError


class Tensor:
    """Dense float64 array with shape, values, and an optional accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def backward(self):
        """Backpropagate from a scalar result through the whole graph."""
        if self.data.shape != ():
            raise ShapeError(f"backward() needs a scalar, got shape {self.data.shape}")
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(_toposort(self)):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative post-order: parents appear before their consumers.
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def accumulate(t: Tensor, g: np.ndarray) -> None:
    """Add a gradient contribution to ``t`` if it participates in training."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.asarray(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def constant(data) -> Tensor:
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unary(x: Tensor, out_data: np.ndarray, grad_fn) -> Tensor:
    out = Tensor(out_data, requires_grad=x.requires_grad, parents=(x,))
    if out.requires_grad:
        out._backward = lambda g: accumulate(x, grad_fn(g))
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad,
                 parents=(a, b))
    if out.requires_grad:
        def _bwd(g):
            accumulate(a, g)
            accumulate(b, g)
        out._backward = _bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad,
                 parents=(a, b))
    if out.requires_grad:
        def _bwd(g):
            accumulate(a, g * b.data)
            accumulate(b, g * a.data)
        out._backward = _bwd
    return out


def sigmoid_np(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function; outputs lie strictly in (0, 1)."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = sigmoid_np(x.data)
    return _unary(x, s, lambda g: g * s * (1.0 - s))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _unary(x, t, lambda g: g * (1.0 - t * t))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    return _unary(x, out, lambda g: g * (x.data > 0.0))


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.shape
    return _unary(x, x.data.reshape(shape), lambda g: g.reshape(orig))


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """View of rows [start, stop) along the first axis."""
    out_data = x.data[start:stop]

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return full

    return _unary(x, out_data, grad_fn)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """View of columns [start, stop) along the last axis."""
    out_data = x.data[..., start:stop]

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return full

    return _unary(x, out_data, grad_fn)


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack k same-shape tensors into a new leading axis."""
    if not tensors:
        raise ShapeError("stack_rows: empty input")
    data = np.stack([t.data for t in tensors], axis=0)
    out = Tensor(data, requires_grad=any(t.requires_grad for t in tensors),
                 parents=tuple(tensors))
    if out.requires_grad:
        def _bwd(g):
            for i, t in enumerate(tensors):
                accumulate(t, g[i])
        out._backward = _bwd
    return out


def const_matmul(c: np.ndarray, x: Tensor) -> Tensor:
    """Product ``c @ x`` with a constant coefficient matrix."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or x.data.ndim != 2 or c.shape[1] != x.data.shape[0]:
        raise ShapeError(f"const_matmul: coeffs {c.shape} vs operand {x.data.shape}")
    return _unary(x, c @ x.data, lambda g: c.T @ g)


def pad_time_stack(tensors: Sequence[Tensor], t_max: int) -> Tensor:
    """Stack per-item (T_i, p) tensors into (t_max, batch, p), zero-padded in time."""
    if not tensors:
        raise ShapeError("pad_time_stack: empty input")
    p = tensors[0].data.shape[1]
    data = np.zeros((t_max, len(tensors), p), dtype=np.float64)
    for i, t in enumerate(tensors):
        data[: t.data.shape[0], i, :] = t.data
    out = Tensor(data, requires_grad=any(t.requires_grad for t in tensors),
                 parents=tuple(tensors))
    if out.requires_grad:
        def _bwd(g):
            for i, t in enumerate(tensors):
                accumulate(t, g[: t.data.shape[0], i, :])
        out._backward = _bwd
    return out


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``weight @ x (+ bias)``.

    ``x`` may be a single vector (n,) giving (m,), or a batch (B, n) giving
    (B, m). ``weight`` is (m, n), ``bias`` (m,).
    """
    m, n = weight.data.shape if weight.data.ndim == 2 else (None, None)
    if m is None or x.data.shape[-1] != n:
        raise ShapeError(f"dense: weight {weight.data.shape} incompatible with input {x.data.shape}")
    if bias is not None and bias.data.shape != (m,):
        raise ShapeError(f"dense: bias {bias.data.shape} incompatible with weight {weight.data.shape}")
    single = x.data.ndim == 1
    if x.data.ndim > 2:
        raise ShapeError(f"dense: input must be 1-D or 2-D, got {x.data.shape}")

    out_data = x.data @ weight.data.T
    if bias is not None:
        out_data = out_data + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor(out_data, requires_grad=any(p.requires_grad for p in parents),
                 parents=parents)
    if out.requires_grad:
        def _bwd(g):
            if single:
                accumulate(weight, np.outer(g, x.data))
                accumulate(x, weight.data.T @ g)
                if bias is not None:
                    accumulate(bias, g)
            else:
                accumulate(weight, g.T @ x.data)
                accumulate(x, g @ weight.data)
                if bias is not None:
                    accumulate(bias, g.sum(axis=0))
        out._backward = _bwd
    return out
