"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tape records every traced operation in execution order.  Execution order
is already a valid topological order (the inputs of a node were produced,
and therefore recorded, before the node itself), so backward() walks the
node list once in reverse and accumulates gradients into Tensor.grad.

Only what the aligner actually uses is provided: elementwise arithmetic
with broadcasting, matmul against a 2-D weight, slicing, concatenation,
reductions and trig.  Layer-level ops (linear, relu, batchnorm, ...) live
in nn.py.  There is no graph optimization and no GPU path.
"""

from __future__ import annotations

import contextlib
from typing import Optional

import numpy as np

_DEFAULT_DTYPE = np.float32
_FINITE_CHECK = False
_TAPES: list["Tape"] = []


def set_default_dtype(dtype) -> None:
    """Training runs in float32; tests switch to float64 for tight tolerances."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}")
    _DEFAULT_DTYPE = dt.type


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def use_dtype(dtype):
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def set_finite_check(enabled: bool) -> None:
    """When on, every op checks its output and raises FloatingPointError on
    NaN/inf instead of letting the poison propagate silently."""
    global _FINITE_CHECK
    _FINITE_CHECK = bool(enabled)


class Tensor:
    """Dense real array plus an accumulated gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_traced")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data)
        self.data = np.ascontiguousarray(arr, dtype=dtype or _DEFAULT_DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._traced = requires_grad

    @classmethod
    def _raw(cls, arr: np.ndarray) -> "Tensor":
        # internal: wrap an op result without re-casting its dtype
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t.name = None
        t._traced = False
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Tape:
    """Recording context for one forward/backward pass; single owner."""

    def __init__(self):
        self.nodes = []  # backward closures, recording order = topological order
        self.params: dict[int, Tensor] = {}  # leaf tensors touched this pass

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPES.pop()
        assert popped is self, "tapes must unwind in LIFO order"
        return False

    def _record(self, backward, inputs) -> None:
        self.nodes.append(backward)
        for x in inputs:
            if isinstance(x, Tensor) and x.requires_grad:
                self.params.setdefault(id(x), x)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ValueError("backward expects a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):  # each node exactly once
            node()


def _active_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _accum(x: Tensor, g: np.ndarray) -> None:
    if x.grad is None:
        x.grad = np.array(g, dtype=x.data.dtype)
    else:
        x.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _finish(opname: str, out: Tensor, inputs, backward) -> Tensor:
    """Common tail of every op: finiteness hook, conditional recording."""
    if _FINITE_CHECK and not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"non-finite values produced by {opname}")
    tape = _active_tape()
    if tape is not None and any(isinstance(x, Tensor) and x._traced for x in inputs):
        out._traced = True

        def guarded():
            # a recorded output no later op consumed has no gradient;
            # its inputs receive zero contribution, i.e. nothing
            if out.grad is not None:
                backward()

        tape._record(guarded, inputs)
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor._raw(a.data + b.data)

    def backward():
        if a._traced:
            _accum(a, _unbroadcast(out.grad, a.data.shape))
        if b._traced:
            _accum(b, _unbroadcast(out.grad, b.data.shape))

    return _finish("add", out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor._raw(a.data - b.data)

    def backward():
        if a._traced:
            _accum(a, _unbroadcast(out.grad, a.data.shape))
        if b._traced:
            _accum(b, _unbroadcast(-out.grad, b.data.shape))

    return _finish("sub", out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor._raw(a.data * b.data)

    def backward():
        if a._traced:
            _accum(a, _unbroadcast(out.grad * b.data, a.data.shape))
        if b._traced:
            _accum(b, _unbroadcast(out.grad * a.data, b.data.shape))

    return _finish("mul", out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._raw(-a.data)

    def backward():
        if a._traced:
            _accum(a, -out.grad)

    return _finish("neg", out, (a,), backward)


def matmul(a, w) -> Tensor:
    """x @ W with W strictly 2-D; x may carry leading batch axes."""
    a, w = as_tensor(a), as_tensor(w)
    if w.data.ndim != 2:
        raise ValueError(f"matmul weight must be 2-D, got shape {w.data.shape}")
    if a.data.shape[-1] != w.data.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.data.shape} @ {w.data.shape}")
    out = Tensor._raw(a.data @ w.data)

    def backward():
        g = out.grad
        if a._traced:
            _accum(a, g @ w.data.T)
        if w._traced:
            i, o = w.data.shape
            _accum(w, a.data.reshape(-1, i).T @ g.reshape(-1, o))

    return _finish("matmul", out, (a, w), backward)


# ---------------------------------------------------------------------------
# shape ops

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor._raw(a.data.reshape(shape))

    def backward():
        if a._traced:
            _accum(a, out.grad.reshape(a.data.shape))

    return _finish("reshape", out, (a,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = Tensor._raw(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward():
        pieces = np.split(out.grad, splits, axis=axis)
        for t, piece in zip(ts, pieces):
            if t._traced:
                _accum(t, piece)

    return _finish("concat", out, ts, backward)


def getitem(a, idx) -> Tensor:
    """Slice/gather.  Backward assumes the selection hits each source element
    at most once (true for basic slices and one-index-per-row gathers)."""
    a = as_tensor(a)
    out = Tensor._raw(np.array(a.data[idx]))

    def backward():
        if a._traced:
            g = np.zeros_like(a.data)
            g[idx] += out.grad
            _accum(a, g)

    return _finish("getitem", out, (a,), backward)


# ---------------------------------------------------------------------------
# reductions and trig

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor._raw(np.sum(a.data, axis=axis, keepdims=keepdims))

    def backward():
        if not a._traced:
            return
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _finish("sum", out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor._raw(np.mean(a.data, axis=axis, keepdims=keepdims))
    count = a.data.size if axis is None else a.data.shape[axis]

    def backward():
        if not a._traced:
            return
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape) / count)

    return _finish("mean", out, (a,), backward)


def sin(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._raw(np.sin(a.data))

    def backward():
        if a._traced:
            _accum(a, out.grad * np.cos(a.data))

    return _finish("sin", out, (a,), backward)


def cos(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._raw(np.cos(a.data))

    def backward():
        if a._traced:
            _accum(a, -out.grad * np.sin(a.data))

    return _finish("cos", out, (a,), backward)


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select a where cond else b.  cond is a plain boolean array, not traced;
    gradient flows only into the chosen branch."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = Tensor._raw(np.where(cond, a.data, b.data))

    def backward():
        if a._traced:
            _accum(a, _unbroadcast(np.where(cond, out.grad, 0.0), a.data.shape))
        if b._traced:
            _accum(b, _unbroadcast(np.where(cond, 0.0, out.grad), b.data.shape))

    return _finish("where", out, (a, b), backward)


def stop_gradient(a) -> Tensor:
    """Copy of a treated as a constant by differentiation."""
    a = as_tensor(a)
    return Tensor._raw(a.data.copy())
