"""Dense tensors with tape-based reverse-mode differentiation.

Tensors wrap contiguous numpy arrays (float32 by default; float64 is
supported for high-precision verification). Operations executed while a
Tape is active are recorded in creation order, which is already a
topological order, so the backward sweep visits each node exactly once.

Every public op validates shapes/domains up front and rejects non-finite
outputs, so NaN/Inf never silently propagates out of the core.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, NotScalarOutput, ShapeMismatch

DEFAULT_DTYPE = np.float32

_tls = threading.local()


def _tape_stack() -> list["Tape"]:
    if not hasattr(_tls, "stack"):
        _tls.stack = []
    return _tls.stack


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense array node. Leaves are constants unless they are Parameters."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "_node_id")

    def __init__(self, data, dtype=None, _raw: bool = False):
        if _raw:
            self.data = data
        else:
            arr = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(DEFAULT_DTYPE)
            if not np.all(np.isfinite(arr)):
                raise DomainError("tensor data contains NaN or Inf")
            self.data = np.ascontiguousarray(arr)
        self.requires_grad = False
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray, dict[int, np.ndarray]], None] | None = None
        self._node_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # operator sugar; every method defers to the module-level op
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

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A named trainable tensor; gradients always flow into parameters."""

    __slots__ = ("name",)

    def __init__(self, name: str, data, dtype=None):
        super().__init__(data, dtype=dtype)
        self.name = name
        self.requires_grad = True

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class Tape:
    """Records op outputs during a forward pass; replays them in reverse."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        assert popped is self

    def _record(self, t: Tensor) -> None:
        t._node_id = len(self.nodes)
        self.nodes.append(t)

    def gradient(self, output: Tensor, params: Sequence[Parameter]) -> list[np.ndarray]:
        """Gradients of a scalar output w.r.t. params (zeros if unreachable)."""
        if output.data.size != 1:
            raise NotScalarOutput(f"backward requires a scalar, got shape {output.data.shape}")
        grads: dict[int, np.ndarray] = {}
        if output._node_id is not None:
            grads[id(output)] = np.ones_like(output.data)
            for node in reversed(self.nodes[: output._node_id + 1]):
                g = grads.pop(id(node), None)
                if g is None or node._backward is None:
                    continue
                node._backward(g, grads)
        elif output.requires_grad:
            # output is itself a leaf parameter
            grads[id(output)] = np.ones_like(output.data)
        return [
            grads.get(id(p), np.zeros_like(p.data)).astype(p.data.dtype, copy=False)
            for p in params
        ]


def _accumulate(grads: dict[int, np.ndarray], t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    existing = grads.get(id(t))
    if existing is None:
        # copy: the same upstream array may feed several parents
        grads[id(t)] = g.astype(t.data.dtype, copy=True)
    else:
        existing += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(x, dtype=dtype)


def _make(
    data: np.ndarray,
    parents: tuple[Tensor, ...],
    backward: Callable[[np.ndarray, dict[int, np.ndarray]], None],
    op: str,
) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise DomainError(f"{op} produced a non-finite value")
    out = Tensor(data, _raw=True)
    out.requires_grad = any(p.requires_grad for p in parents)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        out._parents = parents
        out._backward = backward
        tape._record(out)
    return out


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None


# --- arithmetic -----------------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _check_broadcast(a, b, "add")

    def backward(g, grads):
        _accumulate(grads, a, _unbroadcast(g, a.data.shape))
        _accumulate(grads, b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _check_broadcast(a, b, "sub")

    def backward(g, grads):
        _accumulate(grads, a, _unbroadcast(g, a.data.shape))
        _accumulate(grads, b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _check_broadcast(a, b, "mul")

    def backward(g, grads):
        _accumulate(grads, a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(grads, b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), backward, "mul")


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g, grads):
        _accumulate(grads, a, -g)

    return _make(-a.data, (a,), backward, "neg")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch(
            f"matmul requires 2-D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.data.shape} x {b.data.shape}")

    def backward(g, grads):
        _accumulate(grads, a, g @ b.data.T)
        _accumulate(grads, b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


# --- nonlinearities ---------------------------------------------------------


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0)

    def backward(g, grads):
        _accumulate(grads, a, g * (a.data > 0))

    return _make(out_data, (a,), backward, "relu")


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid_stable(a.data)

    def backward(g, grads):
        _accumulate(grads, a, g * s * (1.0 - s))

    return _make(s, (a,), backward, "sigmoid")


def logsigmoid(a) -> Tensor:
    """log(sigmoid(x)) via the cancellation-free branch form."""
    a = _as_tensor(a)
    x = a.data
    out_data = np.minimum(x, 0) - np.log1p(np.exp(-np.abs(x)))

    def backward(g, grads):
        _accumulate(grads, a, g * _sigmoid_stable(-x))

    return _make(out_data, (a,), backward, "logsigmoid")


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.data)

    def backward(g, grads):
        _accumulate(grads, a, g * (1.0 - t * t))

    return _make(t, (a,), backward, "tanh")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)

    def backward(g, grads):
        _accumulate(grads, a, g * out_data)

    return _make(out_data, (a,), backward, "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    if not np.all(a.data > 0):
        raise DomainError("log requires strictly positive input")
    out_data = np.log(a.data)

    def backward(g, grads):
        _accumulate(grads, a, g / a.data)

    return _make(out_data, (a,), backward, "log")


def sin(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g, grads):
        _accumulate(grads, a, g * np.cos(a.data))

    return _make(np.sin(a.data), (a,), backward, "sin")


def cos(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g, grads):
        _accumulate(grads, a, -g * np.sin(a.data))

    return _make(np.cos(a.data), (a,), backward, "cos")


def absval(a) -> Tensor:
    """|x| elementwise; the subgradient at 0 is taken as 0."""
    a = _as_tensor(a)

    def backward(g, grads):
        _accumulate(grads, a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), backward, "absval")


# --- structure --------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeMismatch("concat of zero tensors")
    ref = tensors[0].data.shape
    for t in tensors[1:]:
        if len(t.data.shape) != len(ref):
            raise ShapeMismatch("concat operands differ in rank")
        for ax, (x, y) in enumerate(zip(t.data.shape, ref)):
            if ax != (axis % len(ref)) and x != y:
                raise ShapeMismatch(f"concat operand shapes {t.data.shape} vs {ref}")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g, grads):
        for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
            _accumulate(grads, t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out_data = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"cannot reshape {a.data.shape} to {shape}") from None

    def backward(g, grads):
        _accumulate(grads, a, g.reshape(a.data.shape))

    return _make(out_data, (a,), backward, "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeMismatch(f"transpose axes {axes} invalid for rank {a.data.ndim}")
    inverse = tuple(np.argsort(axes))

    def backward(g, grads):
        _accumulate(grads, a, np.transpose(g, inverse))

    return _make(np.ascontiguousarray(np.transpose(a.data, axes)), (a,), backward, "transpose")


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    # accumulate in float64, store at the input precision
    out_data = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.data.dtype)

    def backward(g, grads):
        if axis is None:
            _accumulate(grads, a, np.broadcast_to(g, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(grads, a, np.broadcast_to(gg, a.data.shape))

    return _make(np.asarray(out_data), (a,), backward, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    out_data = np.mean(a.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.data.dtype)

    def backward(g, grads):
        scaled = g / count
        if axis is None:
            _accumulate(grads, a, np.broadcast_to(scaled, a.data.shape))
        else:
            gg = scaled if keepdims else np.expand_dims(scaled, axis)
            _accumulate(grads, a, np.broadcast_to(gg, a.data.shape))

    return _make(np.asarray(out_data), (a,), backward, "mean")


def embedding_lookup(table: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a (V, d) table; output shape = indices.shape + (d,).

    The backward pass scatter-adds into the table, so lookups are how
    categorical fields receive gradients.
    """
    table = _as_tensor(table)
    if table.data.ndim != 2:
        raise ShapeMismatch(f"embedding table must be 2-D, got {table.data.shape}")
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeMismatch("embedding indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeMismatch(
            f"embedding index out of range [0, {table.data.shape[0]}) "
            f"(got min {idx.min()}, max {idx.max()})"
        )
    d = table.data.shape[1]

    def backward(g, grads):
        if not table.requires_grad:
            return
        acc = grads.get(id(table))
        if acc is None:
            acc = np.zeros_like(table.data)
            grads[id(table)] = acc
        np.add.at(acc, idx.reshape(-1), g.reshape(-1, d).astype(acc.dtype, copy=False))

    return _make(table.data[idx], (table,), backward, "embedding_lookup")
