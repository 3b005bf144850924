"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every differentiable operation records its inputs and a vector-Jacobian
product (vjp). The vjp of an operation is written with the same ``Tensor``
operations, so running backward with graph recording switched on yields
gradients that are themselves differentiable. This is what the gradient
penalty needs: the critic's input gradient is built as a graph and the
penalty built from it is backpropagated to the critic parameters.

Only operations flagged ``second_order`` may be traversed when the backward
pass itself is recorded (see :func:`gradient_of`). Transcendental
activations (tanh, sigmoid, exp, log) are first-order only and raise
:class:`SecondOrderError` on that path instead of silently truncating.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit as _expit

LEAKY_SLOPE = 0.2

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = enabled
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class SecondOrderError(RuntimeError):
    """Raised when a recorded backward pass meets a first-order-only op."""


class Tensor:
    """An n-d float64 array that can take part in a recorded graph.

    The recorded node (``_parents``, ``_vjp``, ``_op``) is the tape entry; it
    exists only when graph recording is on and some input requires grad.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp", "_op", "_second_order")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self._op: str | None = None
        self._second_order = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def op(self) -> str | None:
        return self._op

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        return transpose(self, axes or None)

    @property
    def T(self) -> Tensor:
        return transpose(self, None)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        _backprop(self, np.ones_like(self.data), wrt=None, create_graph=False)


class Parameter(Tensor):
    """A trainable leaf with a stable name and an accumulated gradient."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, parents: tuple, vjp: Callable, op: str, second_order: bool = True) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        out._op = op
        out._second_order = second_order
    return out


# ---------------------------------------------------------------- backprop


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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _backprop(root: Tensor, seed: np.ndarray, wrt: Tensor | None, create_graph: bool):
    if not root.requires_grad:
        return None
    order = _topo_order(root)
    reach: set[int] | None = None
    if wrt is not None:
        reach = {id(wrt)}
        for node in order:
            if any(id(p) in reach for p in node._parents):
                reach.add(id(node))
        if id(root) not in reach:
            return None
    adj: dict[int, Tensor] = {id(root): Tensor(seed)}
    result = None
    with _grad_mode(create_graph):
        for node in reversed(order):
            g = adj.pop(id(node), None)
            if g is None:
                continue
            if wrt is not None and node is wrt:
                result = g
                continue
            if node._vjp is None:
                if wrt is None:
                    node.grad = g.data.copy() if node.grad is None else node.grad + g.data
                continue
            if create_graph and not node._second_order:
                raise SecondOrderError(
                    f"operation '{node._op}' has no second-order rule; "
                    "it cannot sit between the input and the output of a differentiable gradient"
                )
            grads = node._vjp(g)
            for p, pg in zip(node._parents, grads):
                if pg is None or not p.requires_grad:
                    continue
                if reach is not None and id(p) not in reach:
                    continue
                prev = adj.get(id(p))
                if prev is None:
                    adj[id(p)] = pg
                elif create_graph:
                    adj[id(p)] = add(prev, pg)
                else:
                    adj[id(p)] = Tensor(prev.data + pg.data)
    return result


def gradient_of(output: Tensor, wrt: Tensor, create_graph: bool = True) -> Tensor:
    """Return d(output)/d(wrt) as a tensor shaped like ``wrt``.

    With ``create_graph`` the result is a recorded node, so a loss built from
    it can be backpropagated again (double backprop). Outputs that do not
    depend on ``wrt`` give an all-zero constant.
    """
    if output.data.size != 1:
        raise ValueError(f"gradient_of needs a scalar output, got shape {output.shape}")
    g = _backprop(output, np.ones_like(output.data), wrt=wrt, create_graph=create_graph)
    if g is None:
        return Tensor(np.zeros_like(wrt.data))
    return g


# ---------------------------------------------------------------- shape helpers


def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``x`` down to ``shape`` (reverse of numpy broadcasting)."""
    if x.shape == tuple(shape):
        return x
    data = x.data
    lead = data.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and data.shape[i + lead] != 1
    )
    out = data.sum(axis=axes, keepdims=True)
    if lead:
        out = out.reshape(out.shape[lead:])
    in_shape = x.shape

    def vjp(g):
        return (broadcast_to(g, in_shape),)

    return _record(out, (x,), vjp, "sum_to")


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if x.shape == tuple(shape):
        return x
    in_shape = x.shape

    def vjp(g):
        return (sum_to(g, in_shape),)

    return _record(np.broadcast_to(x.data, shape).copy(), (x,), vjp, "broadcast_to")


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return sum_to(g, sa), sum_to(g, sb)

    return _record(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return sum_to(g, sa), sum_to(neg(g), sb)

    return _record(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        ga = sum_to(mul(g, b), a.shape) if a.requires_grad else None
        gb = sum_to(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return _record(a.data * b.data, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        ga = sum_to(div(g, b), a.shape) if a.requires_grad else None
        gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape) if b.requires_grad else None
        return ga, gb

    return _record(a.data / b.data, (a, b), vjp, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (neg(g),), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)

    def vjp(g):
        if p == 1.0:
            return (g,)
        return (mul(g, mul(p, power(a, p - 1.0))),)

    return _record(a.data**p, (a,), vjp, f"pow")


def square(a) -> Tensor:
    return power(a, 2.0)


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)

    def vjp(g):
        # piecewise linear: the slope mask is a constant, second derivative is zero
        return (mul(g, factor),)

    return _record(a.data * factor, (a,), vjp, "leaky_relu")


def relu(a) -> Tensor:
    return leaky_relu(a, 0.0)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (mul(g, 1.0 - y * y),), "tanh", second_order=False)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _expit(a.data)
    return _record(y, (a,), lambda g: (mul(g, y * (1.0 - y)),), "sigmoid", second_order=False)


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _record(y, (a,), lambda g: (mul(g, y),), "exp", second_order=False)


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _record(np.log(x), (a,), lambda g: (div(g, x),), "log", second_order=False)


# ---------------------------------------------------------------- reductions


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def _kept_shape(shape, axes) -> tuple[int, ...]:
    return tuple(1 if i in axes else s for i, s in enumerate(shape))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    in_shape = a.shape
    kept = _kept_shape(in_shape, axes)

    def vjp(g):
        if not keepdims:
            g = reshape(g, kept)
        return (broadcast_to(g, in_shape),)

    return _record(a.data.sum(axis=axes, keepdims=keepdims), (a,), vjp, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(tsum(a, axes, keepdims), 1.0 / n)


def l2norm(a, axis=None) -> Tensor:
    """sqrt(sum(a**2)) over ``axis`` with a zero-safe derivative.

    At a zero vector the derivative is taken as zero rather than NaN.
    """
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    kept = _kept_shape(a.shape, axes)
    y = np.sqrt((a.data * a.data).sum(axis=axes))
    out = _record(y, (a,), None, "l2norm")

    def vjp(g):
        y_kept = reshape(out, kept)
        safe = add(y_kept, (y.reshape(kept) == 0.0).astype(np.float64))
        return (mul(reshape(g, kept), div(a, safe)),)

    if out.requires_grad:
        out._vjp = vjp
    return out


# ---------------------------------------------------------------- structure


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    in_shape = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (reshape(g, in_shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(a.data.transpose(axes), (a,), lambda g: (transpose(g, inv),), "transpose")


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., k) and a 2-D ``b`` of shape (k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def vjp(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            a2 = reshape(a, (-1, a.shape[-1]))
            g2 = reshape(g, (-1, b.shape[1]))
            gb = matmul(transpose(a2), g2)
        return ga, gb

    if a.ndim > 2:  # one large GEMM beats a stack of small ones
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + (b.shape[1],))
    else:
        out = a.data @ b.data
    return _record(out, (a, b), vjp, "matmul")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    axis = axis % ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def vjp(g):
        out = []
        for i in range(len(tensors)):
            idx = [slice(None)] * ndim
            idx[axis] = slice(int(bounds[i]), int(bounds[i + 1]))
            out.append(getitem(g, tuple(idx)))
        return tuple(out)

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


def _is_basic(idx) -> bool:
    if not isinstance(idx, tuple):
        idx = (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in idx)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    in_shape = a.shape
    return _record(a.data[idx], (a,), lambda g: (index_put(g, idx, in_shape),), "getitem")


def index_put(g, idx, shape) -> Tensor:
    """Zeros of ``shape`` with ``g`` added at ``idx`` (repeated indices accumulate)."""
    g = as_tensor(g)
    out = np.zeros(shape)
    if _is_basic(idx):
        out[idx] += g.data
    else:
        np.add.at(out, idx, g.data)
    return _record(out, (g,), lambda gg: (getitem(gg, idx),), "index_put")


def take(a, indices: np.ndarray, axis: int = 0) -> Tensor:
    idx = (slice(None),) * (axis % as_tensor(a).ndim) + (np.asarray(indices),)
    return getitem(a, idx)


def unfold1d(a, kernel: int, stride: int) -> Tensor:
    """Sliding patches along axis 1: (B, L, C) -> (B, n_out, kernel, C)."""
    a = as_tensor(a)
    batch, length, channels = a.shape
    n_out = (length - kernel) // stride + 1
    view = np.lib.stride_tricks.sliding_window_view(a.data, kernel, axis=1)[:, ::stride]
    out = np.ascontiguousarray(view[:, :n_out].transpose(0, 1, 3, 2))
    return _record(out, (a,), lambda g: (fold1d(g, kernel, stride, length),), "unfold1d")


def fold1d(g, kernel: int, stride: int, length: int) -> Tensor:
    """Adjoint of :func:`unfold1d`: scatter-add patches back onto the sequence."""
    g = as_tensor(g)
    batch, n_out, _, channels = g.shape
    out = np.zeros((batch, length, channels))
    stop = stride * (n_out - 1) + 1
    for k in range(kernel):
        out[:, k:k + stop:stride, :] += g.data[:, :, k, :]
    return _record(out, (g,), lambda gg: (unfold1d(gg, kernel, stride),), "fold1d")


def where_const(mask: np.ndarray, a, b) -> Tensor:
    """Select elementwise by a constant boolean mask."""
    m = np.asarray(mask, dtype=np.float64)
    return add(mul(a, m), mul(b, 1.0 - m))


def mse_loss(pred: Tensor, target) -> Tensor:
    return mean(square(sub(pred, target)))


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
