"""Tensor-level reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Every op records its parents and a
closure that pushes the output gradient back to them; :meth:`Tensor.backward`
walks the recorded graph in reverse topological order. The op set is small
and fixed: matmul, add, sub, mul, tanh, sigmoid, relu, concat, column slicing,
row gather, reductions, squared error and a fused LSTM cell.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True
_CHECK_FINITE = True


class ShapeError(ValueError):
    """Operand shapes are incompatible; raised before the op runs."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def finite_checks(enabled: bool):
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = enabled
    try:
        yield
    finally:
        _CHECK_FINITE = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label})"

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward: implicit gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if _CHECK_FINITE and not _all_finite(g):
                raise NonFiniteError(f"non-finite gradient flowing into op '{node._op}'")
            if node._backward is None:
                if node.requires_grad:
                    node._accum(g)
                continue
            for parent, pg in node._backward(g):
                if pg is None or not (parent.requires_grad or parent._parents):
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracks(*ts: Tensor) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad or t._parents for t in ts)


def _all_finite(a: np.ndarray) -> bool:
    # a finite sum implies finite entries; only fall back to the full scan on overflow
    return bool(np.isfinite(np.add.reduce(a, axis=None))) or bool(np.all(np.isfinite(a)))


def _make(data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward) -> Tensor:
    if _CHECK_FINITE and not _all_finite(data):
        raise NonFiniteError(f"op '{op}' produced a non-finite value")
    out = Tensor(data)
    out._op = op
    if _tracks(*parents):
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op: str, a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a} and {b}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: ((a, _unbroadcast(g, sa)), (b, _unbroadcast(g, sb))))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: ((a, _unbroadcast(g, sa)), (b, -_unbroadcast(g, sb))))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(ad * bd, "mul", (a, b),
                 lambda g: ((a, _unbroadcast(g * bd, ad.shape)), (b, _unbroadcast(g * ad, bd.shape))))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, "matmul", (a, b), lambda g: ((a, g @ bd.T), (b, ad.T @ g)))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, "tanh", (x,), lambda g: ((x, g * (1.0 - y * y)),))


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid_np(x.data)
    return _make(y, "sigmoid", (x,), lambda g: ((x, g * y * (1.0 - y)),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(x.data * mask, "relu", (x,), lambda g: ((x, g * mask),))


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(x) for x in xs)
    if not ts:
        raise ShapeError("concat: no inputs")
    nd = ts[0].data.ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.data.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: shapes {[t.shape for t in ts]} disagree off axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def back(g):
        return tuple(zip(ts, np.split(g, sizes, axis=ax)))

    return _make(np.concatenate([t.data for t in ts], axis=ax), "concat", ts, back)


def slice_cols(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_cols: bad range [{start}:{stop}] for shape {x.shape}")
    shape = x.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return ((x, full),)

    return _make(x.data[:, start:stop], "slice_cols", (x,), back)


def gather_rows(x, idx) -> Tensor:
    """Pick ``x[i, idx[i]]`` for every row, giving shape (B,)."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if x.data.ndim != 2 or idx.shape != (x.shape[0],):
        raise ShapeError(f"gather_rows: index shape {idx.shape} does not match rows of {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise ShapeError(f"gather_rows: index out of range for {x.shape[1]} columns")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[rows, idx] = g
        return ((x, full),)

    return _make(x.data[rows, idx], "gather_rows", (x,), back)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} to {shape}") from None
    return _make(y, "reshape", (x,), lambda g: ((x, g.reshape(old)),))


def sum(x) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    shape = x.shape
    return _make(np.asarray(x.data.sum()), "sum", (x,), lambda g: ((x, np.broadcast_to(g, shape).copy()),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    shape, n = x.shape, max(x.data.size, 1)
    return _make(np.asarray(x.data.mean()), "mean", (x,),
                 lambda g: ((x, np.broadcast_to(g / n, shape).copy()),))


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _make(xd * xd, "square", (x,), lambda g: ((x, 2.0 * g * xd),))


def squared_error(pred, target) -> Tensor:
    """Mean over rows of the per-row summed squared error."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"squared_error: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    rows = diff.shape[0] if diff.ndim > 0 else 1
    val = np.asarray((diff * diff).sum() / rows)

    def back(g):
        gp = (2.0 / rows) * g * diff
        return ((pred, gp), (target, -gp))

    return _make(val, "squared_error", (pred, target), back)


def lstm_cell(x, h, c, w, b) -> tuple[Tensor, Tensor]:
    """One LSTM step with gate order (input, forget, cell, output).

    ``w`` has shape (I + H, 4H) acting on ``[x, h]``; returns (h', c').
    """
    x, h, c, w, b = (as_tensor(t) for t in (x, h, c, w, b))
    if x.data.ndim != 2 or h.data.ndim != 2 or c.shape != h.shape:
        raise ShapeError(f"lstm_cell: bad state shapes x={x.shape} h={h.shape} c={c.shape}")
    bsz, nin = x.shape
    nh = h.shape[1]
    if h.shape[0] != bsz or w.shape != (nin + nh, 4 * nh) or b.shape != (4 * nh,):
        raise ShapeError(
            f"lstm_cell: input {x.shape}, hidden {h.shape} incompatible with weight {w.shape}, bias {b.shape}")
    xh = np.concatenate([x.data, h.data], axis=1)
    z = xh @ w.data + b.data
    i = _sigmoid_np(z[:, :nh])
    f = _sigmoid_np(z[:, nh:2 * nh])
    gg = np.tanh(z[:, 2 * nh:3 * nh])
    o = _sigmoid_np(z[:, 3 * nh:])
    c_new = f * c.data + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc
    packed = np.concatenate([h_new, c_new], axis=1)
    cd, wd = c.data, w.data

    def back(gpack):
        dh = gpack[:, :nh]
        dc = gpack[:, nh:] + dh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * gg * i * (1.0 - i),
            dc * cd * f * (1.0 - f),
            dc * i * (1.0 - gg * gg),
            dh * tc * o * (1.0 - o),
        ], axis=1)
        dxh = dz @ wd.T
        return ((x, dxh[:, :nin]), (h, dxh[:, nin:]), (c, dc * f), (w, xh.T @ dz), (b, dz.sum(axis=0)))

    out = _make(packed, "lstm_cell", (x, h, c, w, b), back)
    return slice_cols(out, 0, nh), slice_cols(out, nh, 2 * nh)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
