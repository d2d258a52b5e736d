"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tape` is an append-only list of nodes. Every primitive applied to a
tensor that lives on a tape appends one node holding its parents and a
vector-Jacobian closure. :func:`backprop` walks the nodes in reverse order.

Example::

    tape = Tape()
    x = tape.variable([1.0, 2.0, 3.0])
    loss = (x * x).sum()
    grads = backprop(tape, loss)
    grads[x.node]  # array([2., 4., 6.])
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tape",
    "Tensor",
    "as_tensor",
    "backprop",
    "concat",
    "get_dtype",
    "grad_check",
    "precision",
    "record_primitive",
    "set_precision",
    "PRIMITIVES",
]

_PRECISIONS = {"float64": np.float64, "float32": np.float32}
_dtype = np.float64


def set_precision(name: str) -> None:
    """Select the global numeric precision ("float64" for checks, "float32" for training)."""
    global _dtype
    if name not in _PRECISIONS:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}")
    _dtype = _PRECISIONS[name]


def get_dtype():
    return _dtype


@contextlib.contextmanager
def precision(name: str):
    previous = np.dtype(_dtype).name
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to a primitive."""

    def __init__(self, primitive: str, *shapes, detail: str = ""):
        self.primitive = primitive
        self.shapes = tuple(tuple(s) for s in shapes)
        shown = " and ".join(str(s) for s in self.shapes)
        msg = f"{primitive}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class _Node:
    __slots__ = ("op", "parents", "vjp")

    def __init__(self, op, parents, vjp):
        self.op = op
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Append-only record of primitive applications."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.dtype = _dtype
        self.live = True
        self.leaf_shapes: dict[int, tuple] = {}

    def __len__(self):
        return len(self.nodes)

    def _append(self, op, parents, vjp) -> int:
        if not self.live:
            raise RuntimeError("tape has been released")
        self.nodes.append(_Node(op, parents, vjp))
        return len(self.nodes) - 1

    def variable(self, data) -> "Tensor":
        """Register a leaf tensor whose gradient will be reported by backprop."""
        arr = np.array(data, dtype=self.dtype)
        t = Tensor(arr)
        t.tape = self
        t.node = self._append("leaf", (), None)
        self.leaf_shapes[t.node] = arr.shape
        return t

    def release(self):
        self.nodes = []
        self.leaf_shapes = {}
        self.live = False


class Tensor:
    """n-dimensional array, optionally attached to a :class:`Tape`."""

    __slots__ = ("data", "tape", "node")
    __array_priority__ = 100

    def __init__(self, data, *, _raw: bool = False):
        if _raw:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_dtype)
        self.tape = None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data, _raw=True)

    def __repr__(self):
        where = f", node={self.node}" if self.node is not None else ""
        return f"Tensor({self.data!r}{where})"

    def __len__(self):
        return len(self.data)

    # arithmetic sugar
    def __add__(self, other):
        return record_primitive("add", [self, other])

    def __radd__(self, other):
        return record_primitive("add", [other, self])

    def __sub__(self, other):
        return record_primitive("sub", [self, other])

    def __rsub__(self, other):
        return record_primitive("sub", [other, self])

    def __mul__(self, other):
        return record_primitive("mul", [self, other])

    def __rmul__(self, other):
        return record_primitive("mul", [other, self])

    def __neg__(self):
        return record_primitive("mul", [self, -1.0])

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not a primitive; multiply by exp(-log) instead")
        return record_primitive("mul", [self, 1.0 / other])

    def __matmul__(self, other):
        return record_primitive("matmul", [self, other])

    def __rmatmul__(self, other):
        return record_primitive("matmul", [other, self])

    def __getitem__(self, index):
        return record_primitive("slice", [self], index=index)

    def sum(self, axis=None, keepdims=False):
        return record_primitive("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return record_primitive("mean", [self], axis=axis, keepdims=keepdims)

    def exp(self):
        return record_primitive("exp", [self])

    def log(self):
        return record_primitive("log", [self])

    def tanh(self):
        return record_primitive("tanh", [self])

    def softplus(self):
        return record_primitive("softplus", [self])

    def sigmoid(self):
        return record_primitive("sigmoid", [self])

    def relu(self):
        return record_primitive("relu", [self])

    def square(self):
        return record_primitive("square", [self])

    def clip(self, lo, hi):
        return record_primitive("clip", [self], lo=lo, hi=hi)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return record_primitive("reshape", [self], shape=shape)

    def broadcast_to(self, shape):
        return record_primitive("broadcast", [self], shape=tuple(shape))


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# Each primitive: forward(*arrays, **kw) -> (out, vjp) where vjp(g) returns one
# gradient (or None) per input, already shaped like that input.


def _binary(op, fn, a, b):
    try:
        return fn(a, b)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _p_add(a, b):
    sa, sb = a.shape, b.shape
    return _binary("add", np.add, a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))


def _p_sub(a, b):
    sa, sb = a.shape, b.shape
    return _binary("sub", np.subtract, a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))


def _p_mul(a, b):
    out = _binary("mul", np.multiply, a, b)
    return out, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _p_matmul(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape, detail="inner dimensions must agree")
    try:
        out = a @ b
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch dimensions do not broadcast") from None

    def vjp(g):
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return out, vjp


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _p_sum(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    out = a.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return out, vjp


def _p_mean(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    shape = a.shape
    out = a.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return out, vjp


def _p_exp(a):
    out = np.exp(a)
    return out, lambda g: (g * out,)


def _p_log(a):
    return np.log(a), lambda g: (g / a,)


def _p_tanh(a):
    out = np.tanh(a)
    return out, lambda g: (g * (1.0 - out * out),)


def _sigmoid(a):
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _p_softplus(a):
    out = np.logaddexp(0.0, a).astype(a.dtype, copy=False)
    return out, lambda g: (g * _sigmoid(a),)


def _p_sigmoid(a):
    out = _sigmoid(a)
    return out, lambda g: (g * out * (1.0 - out),)


def _p_relu(a):
    mask = a > 0
    return a * mask, lambda g: (g * mask,)


def _p_square(a):
    return a * a, lambda g: (2.0 * g * a,)


def _p_clip(a, lo=None, hi=None):
    out = np.clip(a, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a >= lo
    if hi is not None:
        inside &= a <= hi
    return out, lambda g: (g * inside,)


def _p_concat(*arrays, axis=0):
    ref = arrays[0]
    ax = axis % ref.ndim
    for other in arrays[1:]:
        if other.ndim != ref.ndim or any(
            i != ax and other.shape[i] != ref.shape[i] for i in range(ref.ndim)
        ):
            raise ShapeError("concat", ref.shape, other.shape, detail=f"axis={axis}")
    out = np.concatenate(arrays, axis=ax)
    bounds = np.cumsum([0] + [a.shape[ax] for a in arrays])

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(arrays))
        )

    return out, vjp


def _p_slice(a, index=None):
    try:
        out = a[index]
    except IndexError as exc:
        raise ShapeError("slice", a.shape, detail=str(exc)) from None
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        if _is_fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return np.array(out, copy=True), vjp


def _is_fancy(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _p_broadcast(a, shape=None):
    try:
        out = np.broadcast_to(a, shape).copy()
    except ValueError:
        raise ShapeError("broadcast", a.shape, shape) from None
    src = a.shape
    return out, lambda g: (_unbroadcast(g, src),)


def _p_reshape(a, shape=None):
    try:
        out = a.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    src = a.shape
    return out, lambda g: (g.reshape(src),)


PRIMITIVES: dict[str, Callable] = {
    "add": _p_add,
    "sub": _p_sub,
    "mul": _p_mul,
    "matmul": _p_matmul,
    "sum": _p_sum,
    "mean": _p_mean,
    "exp": _p_exp,
    "log": _p_log,
    "tanh": _p_tanh,
    "softplus": _p_softplus,
    "sigmoid": _p_sigmoid,
    "relu": _p_relu,
    "square": _p_square,
    "clip": _p_clip,
    "concat": _p_concat,
    "slice": _p_slice,
    "broadcast": _p_broadcast,
    "reshape": _p_reshape,
}


def record_primitive(op: str, inputs: Sequence, **kwargs) -> Tensor:
    """Apply primitive ``op`` to ``inputs`` and record it if any input is on a tape."""
    fn = PRIMITIVES.get(op)
    if fn is None:
        raise ValueError(f"unknown primitive {op!r}")
    tape = None
    arrays = []
    parents = []
    for x in inputs:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        t = x.tape
        if t is not None:
            if tape is None:
                tape = t
            elif t is not tape:
                raise RuntimeError(f"{op}: inputs live on different tapes")
        arrays.append(x.data)
        parents.append(x.node)
    if tape is not None:
        for arr in arrays:
            if arr.dtype != tape.dtype:
                raise TypeError(f"{op}: {arr.dtype} operand on a {np.dtype(tape.dtype).name} tape")
    out, vjp = fn(*arrays, **kwargs)
    result = Tensor(out if type(out) is np.ndarray else np.asarray(out), _raw=True)
    if tape is not None:
        result.tape = tape
        result.node = tape._append(op, tuple(parents), vjp)
    return result


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    return record_primitive("concat", list(tensors), axis=axis)


def backprop(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse pass from scalar ``loss``; returns gradients keyed by leaf node handle.

    Every leaf registered on the tape gets an entry (zeros when unused).
    """
    if loss.size != 1:
        raise ValueError(f"backprop needs a scalar loss, got shape {loss.shape}")
    if loss.tape is not tape:
        raise ValueError("loss is not recorded on this tape")
    nodes = tape.nodes
    grads: list = [None] * len(nodes)
    grads[loss.node] = np.ones(loss.shape, dtype=tape.dtype)
    leaves: dict[int, np.ndarray] = {}
    for i in range(len(nodes) - 1, -1, -1):
        node = nodes[i]
        g = grads[i]
        if node.vjp is None:
            leaves[i] = g
            continue
        if g is None:
            continue
        grads[i] = None
        for parent, pg in zip(node.parents, node.vjp(g)):
            if parent is None or pg is None:
                continue
            prev = grads[parent]
            grads[parent] = pg if prev is None else prev + pg
    for i, g in leaves.items():
        if g is None:
            leaves[i] = np.zeros(tape.leaf_shapes[i], dtype=tape.dtype)
    return leaves


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences.

    ``f`` maps a Tensor to a scalar Tensor; it is called once on a tape and
    2·size(x) times off-tape.
    """
    if np.dtype(_dtype) != np.float64:
        raise RuntimeError("grad_check requires float64 precision")
    x = np.array(x, dtype=np.float64)
    tape = Tape()
    xv = tape.variable(x)
    y = f(xv)
    if not np.all(np.isfinite(y.data)):
        raise FloatingPointError("f(x) is not finite")
    g = backprop(tape, y)[xv.node].reshape(-1)
    flat = x.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        xp = flat.copy()
        xp[i] += eps
        xm = flat.copy()
        xm[i] -= eps
        fp = float(f(Tensor(xp.reshape(x.shape))).data)
        fm = float(f(Tensor(xm.reshape(x.shape))).data)
        fd = (fp - fm) / (2.0 * eps)
        worst = max(worst, abs(fd - g[i]) / (abs(g[i]) + 1e-8))
    return worst
