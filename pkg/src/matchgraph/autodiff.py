"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Every tensor of the model is a :class:`Value`.  Operations record their
parents and a closure that pushes the incoming gradient back to them;
:func:`backward` walks that graph in reverse topological order.

Gradients on leaf values accumulate across ``backward`` calls until the
caller resets them with :meth:`Value.zero_grad` (or :func:`zero_grads`).
Intermediate gradients are recomputed from scratch on every call.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

LEAKY_SLOPE = 0.2


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Value:
    """A node of the autodiff graph: an array plus its gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Value, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def __repr__(self):
        return f"Value(op={self.op}, shape={self.shape})"

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True).reshape(self.shape)
        else:
            self.grad += g

    def backward(self):
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _result(data: np.ndarray, parents: Sequence[Value], op: str,
            backward_fn: Callable[[np.ndarray], None]) -> Value:
    out = Value.__new__(Value)
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def custom_op(data: np.ndarray, parents: Sequence[Value], op: str,
              backward_fn: Callable[[np.ndarray], None]) -> Value:
    """Register a fused operation defined outside this module.

    ``backward_fn`` receives the output gradient and must call
    :meth:`Value.accumulate` on the parents that require gradients.
    """
    return _result(np.asarray(data), parents, op, backward_fn)


def as_value(x, like: Value | None = None) -> Value:
    if isinstance(x, Value):
        return x
    dtype = like.data.dtype if like is not None else np.float64
    return Value(np.asarray(x, dtype=dtype))


def _binary_operands(a, b, name: str) -> tuple[Value, Value]:
    if not isinstance(a, Value):
        a = as_value(a, b if isinstance(b, Value) else None)
    if not isinstance(b, Value):
        b = as_value(b, a)
    sa, sb = a.shape, b.shape
    if sa != sb and a.data.size != 1 and b.data.size != 1:
        raise DimensionError(f"{name}: incompatible shapes {sa} and {sb}")
    if sa != sb and a.data.size == 1 and sa != () and b.data.size == 1 and sb != ():
        raise DimensionError(f"{name}: incompatible shapes {sa} and {sb}")
    return a, b


def _reduce_to(g: np.ndarray, v: Value) -> np.ndarray:
    # undo scalar broadcast
    if g.shape == v.shape:
        return g
    return np.asarray(g.sum()).reshape(v.shape)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Value:
    a, b = _binary_operands(a, b, "add")

    def _bw(g):
        if a.requires_grad:
            a.accumulate(_reduce_to(g, a))
        if b.requires_grad:
            b.accumulate(_reduce_to(g, b))

    return _result(a.data + b.data, (a, b), "add", _bw)


def sub(a, b) -> Value:
    a, b = _binary_operands(a, b, "sub")

    def _bw(g):
        if a.requires_grad:
            a.accumulate(_reduce_to(g, a))
        if b.requires_grad:
            b.accumulate(_reduce_to(-g, b))

    return _result(a.data - b.data, (a, b), "sub", _bw)


def mul(a, b) -> Value:
    a, b = _binary_operands(a, b, "mul")

    def _bw(g):
        if a.requires_grad:
            a.accumulate(_reduce_to(g * b.data, a))
        if b.requires_grad:
            b.accumulate(_reduce_to(g * a.data, b))

    return _result(a.data * b.data, (a, b), "mul", _bw)


def neg(a: Value) -> Value:
    def _bw(g):
        a.accumulate(-g)

    return _result(-a.data, (a,), "neg", _bw)


def tanh(a: Value) -> Value:
    y = np.tanh(a.data)

    def _bw(g):
        a.accumulate(g * (1.0 - y * y))

    return _result(y, (a,), "tanh", _bw)


def sigmoid(a: Value) -> Value:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)

    def _bw(g):
        a.accumulate(g * y * (1.0 - y))

    return _result(y, (a,), "sigmoid", _bw)


def relu(a: Value) -> Value:
    mask = a.data > 0

    def _bw(g):
        a.accumulate(g * mask)

    return _result(np.where(mask, a.data, 0.0).astype(a.data.dtype, copy=False),
                   (a,), "relu", _bw)


def leaky_relu(a: Value, slope: float = LEAKY_SLOPE) -> Value:
    mask = a.data > 0
    scale = np.where(mask, 1.0, slope).astype(a.data.dtype, copy=False)

    def _bw(g):
        a.accumulate(g * scale)

    return _result(a.data * scale, (a,), "leaky_relu", _bw)


def abs_(a: Value) -> Value:
    sign = np.sign(a.data)

    def _bw(g):
        a.accumulate(g * sign)

    return _result(np.abs(a.data), (a,), "abs", _bw)


def exp(a: Value) -> Value:
    y = np.exp(a.data)

    def _bw(g):
        a.accumulate(g * y)

    return _result(y, (a,), "exp", _bw)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "abs": abs_,
    "exp": exp,
}


def elementwise(op: str, *args, **kwargs) -> Value:
    """Dispatch a pointwise op by name, e.g. ``elementwise("leaky_relu", x, slope=0.2)``."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a: Value, b: Value) -> Value:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def _bw(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), "matmul", _bw)


def add_bias(x: Value, b: Value) -> Value:
    """Add a length-d bias vector to every row of an n x d matrix."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: incompatible shapes {x.shape} and {b.shape}")

    def _bw(g):
        if x.requires_grad:
            x.accumulate(g)
        if b.requires_grad:
            b.accumulate(g.sum(axis=0))

    return _result(x.data + b.data, (x, b), "add_bias", _bw)


def concat(values: Sequence[Value], axis: int = 0) -> Value:
    values = list(values)
    if not values:
        raise DimensionError("concat: no values given")
    if len(values) == 1:
        return values[0]
    ndim = values[0].data.ndim
    ax = axis % ndim
    for v in values[1:]:
        if v.data.ndim != ndim or any(
            v.shape[d] != values[0].shape[d] for d in range(ndim) if d != ax
        ):
            raise DimensionError(
                f"concat: incompatible shapes {values[0].shape} and {v.shape} on axis {axis}"
            )
    sizes = [v.shape[ax] for v in values]
    bounds = np.cumsum([0] + sizes)

    def _bw(g):
        for v, lo, hi in zip(values, bounds[:-1], bounds[1:]):
            if v.requires_grad:
                idx = [slice(None)] * ndim
                idx[ax] = slice(lo, hi)
                v.accumulate(g[tuple(idx)])

    return _result(np.concatenate([v.data for v in values], axis=ax), values, "concat", _bw)


def narrow(x: Value, axis: int, start: int, stop: int) -> Value:
    """Contiguous slice ``[start, stop)`` along one axis."""
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def _bw(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        x.accumulate(full)

    return _result(x.data[idx], (x,), "narrow", _bw)


def reshape(x: Value, shape: tuple[int, ...]) -> Value:
    def _bw(g):
        x.accumulate(g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), "reshape", _bw)


def gather_rows(x: Value, index) -> Value:
    """Select rows ``x[index]``; repeated indices accumulate on the way back."""
    index = np.asarray(index, dtype=np.int64)

    def _bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        x.accumulate(full)

    return _result(x.data[index], (x,), "gather_rows", _bw)


def scale_rows(x: Value, w: Value) -> Value:
    """Multiply row e of an E x d matrix by the scalar w[e]."""
    if x.data.ndim != 2 or w.data.ndim != 1 or x.shape[0] != w.shape[0]:
        raise DimensionError(f"scale_rows: incompatible shapes {x.shape} and {w.shape}")

    def _bw(g):
        if x.requires_grad:
            x.accumulate(g * w.data[:, None])
        if w.requires_grad:
            w.accumulate((g * x.data).sum(axis=1))

    return _result(x.data * w.data[:, None], (x, w), "scale_rows", _bw)


def sum_(x: Value) -> Value:
    def _bw(g):
        x.accumulate(np.broadcast_to(g, x.shape))

    return _result(np.asarray(x.data.sum()), (x,), "sum", _bw)


# ---------------------------------------------------------------------------
# segment (scatter) operations over edge lists


def _check_segments(n: int, segments: np.ndarray, num_segments: int, name: str):
    if segments.shape != (n,):
        raise DimensionError(f"{name}: segments shape {segments.shape} does not match ({n},)")
    if n and (segments.min() < 0 or segments.max() >= num_segments):
        raise DimensionError(f"{name}: segment id out of range [0, {num_segments})")


def segment_softmax(scores: Value, segments, num_segments: int | None = None) -> Value:
    """Softmax of a 1-D score vector, normalised separately within each segment."""
    segments = np.asarray(segments, dtype=np.int64)
    s = scores.data
    if s.ndim != 1 or s.size == 0:
        raise DimensionError(f"segment_softmax: expected non-empty 1-D scores, got {s.shape}")
    if num_segments is None:
        num_segments = int(segments.max()) + 1
    _check_segments(s.shape[0], segments, num_segments, "segment_softmax")
    seg_max = np.full(num_segments, -np.inf, dtype=s.dtype)
    np.maximum.at(seg_max, segments, s)
    e = np.exp(s - seg_max[segments])
    denom = np.zeros(num_segments, dtype=s.dtype)
    np.add.at(denom, segments, e)
    y = e / denom[segments]

    def _bw(g):
        gy = g * y
        tot = np.zeros(num_segments, dtype=s.dtype)
        np.add.at(tot, segments, gy)
        scores.accumulate(gy - y * tot[segments])

    return _result(y, (scores,), "segment_softmax", _bw)


def segment_sum(messages: Value, segments, num_segments: int) -> Value:
    """Sum rows of ``messages`` into ``num_segments`` buckets; empty buckets are zero."""
    segments = np.asarray(segments, dtype=np.int64)
    m = messages.data
    _check_segments(m.shape[0], segments, num_segments, "segment_sum")
    out = np.zeros((num_segments,) + m.shape[1:], dtype=m.dtype)
    np.add.at(out, segments, m)

    def _bw(g):
        messages.accumulate(g[segments])

    return _result(out, (messages,), "segment_sum", _bw)


# ---------------------------------------------------------------------------
# backward pass


def topological_order(root: Value) -> list[Value]:
    """Nodes reachable from ``root``, every node after all of its parents."""
    order: list[Value] = []
    seen: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Value):
    if loss.data.size != 1:
        raise DimensionError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = topological_order(loss)
    for node in order:
        if not node.is_leaf:
            node.grad = None
    loss.accumulate(np.ones(loss.shape, dtype=loss.data.dtype))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    # intermediate grads are not needed after propagation
    for node in order:
        if not node.is_leaf and node is not loss:
            node.grad = None


def zero_grads(params: Iterable[Value] | Mapping[str, Value]):
    values = params.values() if isinstance(params, Mapping) else params
    for p in values:
        p.zero_grad()


# ---------------------------------------------------------------------------
# finite-difference oracle


def gradient_errors(f: Callable[[], Value], params: Mapping[str, Value],
                    epsilon: float = 1e-5, max_entries: int = 10_000,
                    seed: int = 0) -> dict[str, float]:
    """Compare analytic gradients with central differences, per parameter.

    ``f`` must rebuild the graph from the current ``param.data`` on every
    call.  For each named parameter the error is
    ``max|a - n| / max(max|a|, max|n|, 1e-8)`` over the checked entries.
    Parameters with more than ``max_entries`` entries in total are
    checked on a seeded random subsample.
    """
    zero_grads(params)
    loss = f()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("grad_check: objective is not finite")
    backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    zero_grads(params)

    total = sum(p.data.size for p in params.values())
    rng = np.random.default_rng(seed)
    errors = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if total > max_entries:
            k = max(1, int(round(n * max_entries / total)))
            entries = np.sort(rng.choice(n, size=min(k, n), replace=False))
        else:
            entries = np.arange(n)
        a = analytic[name].reshape(-1)[entries]
        num = np.empty_like(a)
        for out_i, i in enumerate(entries):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = float(f().data)
            flat[i] = orig - epsilon
            down = float(f().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"grad_check: objective not finite perturbing {name}[{i}]")
            num[out_i] = (up - down) / (2 * epsilon)
        scale = max(np.abs(a).max(initial=0.0), np.abs(num).max(initial=0.0), 1e-8)
        errors[name] = float(np.abs(a - num).max(initial=0.0) / scale)
    return errors


def grad_check(f: Callable[[], Value], params: Mapping[str, Value],
               epsilon: float = 1e-5, max_entries: int = 10_000, seed: int = 0) -> float:
    """Worst relative error between analytic and finite-difference gradients."""
    errs = gradient_errors(f, params, epsilon, max_entries, seed)
    return max(errs.values(), default=0.0)
