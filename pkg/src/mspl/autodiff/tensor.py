"""Dense float64 tensors with a reverse-mode tape.

Every primitive builds its output eagerly and, when any input requires a
gradient, records a closure mapping the output gradient to input gradients.
Nodes carry a global creation index; since inputs always exist before the
outputs computed from them, sorting by that index is a topological order and
the backward sweep simply walks it in reverse.
"""
from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ShapeError

_counter = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_index")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._index = next(_counter)

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
    def op(self) -> str:
        return self._op

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label}, requires_grad={self.requires_grad})"

    # operator sugar; all of these route through the primitives below
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
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a constant scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._op = op
    out._index = next(_counter)
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(a.data * b.data, (a, b), bw, "mul")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _record(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def sqdiff(a, b) -> Tensor:
    """Elementwise ``(a - b)**2``."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sqdiff", a, b)
    diff = a.data - b.data

    def bw(g):
        gd = 2.0 * diff * g
        return _unbroadcast(gd, a.shape), _unbroadcast(-gd, b.shape)

    return _record(diff * diff, (a, b), bw, "sqdiff")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------- reductions

def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(np.asarray(a.data.sum(axis=axis)), (a,), bw, "sum")


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _record(np.asarray(a.data.mean(axis=axis)), (a,), bw, "mean")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _record(a.data @ b.data, (a, b), bw, "matmul")


def conv1d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of channels-last ``(N, L, C_in)`` input by ``(C_out, C_in, K)`` kernels.

    Output is ``(N, L_out, C_out)`` with ``L_out = (L + 2*padding - K) // stride + 1``;
    padding is zeros.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {weight.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv1d: invalid stride={stride} padding={padding}")
    n, length, c_in = x.shape
    c_out, _, k = weight.shape
    period = length + 2 * padding
    if period < k:
        raise ShapeError(f"conv1d: input {x.shape} shorter than kernel {weight.shape} after padding")
    out_len = (period - k) // stride + 1
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv1d: bias shape {bias.shape} does not match weight {weight.shape}")

    # Samples are laid end to end in one zero-padded (N*period, C_in) buffer so
    # each kernel tap is a single contiguous GEMM; rows that straddle two
    # samples are computed and then discarded.
    if padding:
        buf = np.zeros((n, period, c_in))
        buf[:, padding : padding + length] = x.data
    else:
        buf = x.data
    flat = buf.reshape(n * period, c_in)
    # row r of the tap-j product reads input row j + r*step
    step = stride if period % stride == 0 else 1
    rows = (n * period - k) // step + 1
    taps = [np.ascontiguousarray(weight.data[:, :, j].T) for j in range(k)]

    acc = flat[0 : (rows - 1) * step + 1 : step] @ taps[0]
    for j in range(1, k):
        acc += flat[j : j + (rows - 1) * step + 1 : step] @ taps[j]
    per_sample = period // step
    full = np.zeros((n * per_sample, c_out))
    full[:rows] = acc
    keep_stride = stride // step
    out = np.ascontiguousarray(full.reshape(n, per_sample, c_out)[:, : (out_len - 1) * keep_stride + 1 : keep_stride])
    if bias is not None:
        out += bias.data

    def bw(g):
        gfull = np.zeros((n, per_sample, c_out))
        gfull[:, : (out_len - 1) * keep_stride + 1 : keep_stride] = g
        gacc = gfull.reshape(n * per_sample, c_out)[:rows]
        gflat = np.zeros((n * period, c_in))
        gw = np.empty(weight.shape)
        for j in range(k):
            sl = slice(j, j + (rows - 1) * step + 1, step)
            gw[:, :, j] = (flat[sl].T @ gacc).T
            gflat[sl] += gacc @ taps[j].T
        gx = gflat.reshape(n, period, c_in)[:, padding : padding + length]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _record(out, parents, bw, "conv1d")


def upsample2(x) -> Tensor:
    """Nearest-neighbour upsampling by 2 along the length axis of ``(N, L, C)``."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"upsample2: expected (N, L, C) input, got {x.shape}")
    n, length, c = x.shape

    def bw(g):
        return (g.reshape(n, length, 2, c).sum(axis=2),)

    return _record(np.repeat(x.data, 2, axis=1), (x,), bw, "upsample2")


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(ref, t.shape)) if i != axis % len(ref)):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(np.concatenate([t.data for t in ts], axis=axis), ts, bw, "concat")


def flatten(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _record(x.data.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),), "flatten")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return _record(data, (x,), lambda g: (g.reshape(old),), "reshape")


# ---------------------------------------------------------------- row-wise ops

def softmax(x) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _record(s, (x,), bw, "softmax")


def log_softmax(x) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _record(out, (x,), bw, "log_softmax")


def take_rows(x, index) -> Tensor:
    """Select ``x[i, index[i]]`` for every row ``i``."""
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise ShapeError(f"take_rows: incompatible shapes {x.shape} and {idx.shape}")
    rows = np.arange(x.shape[0])

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    return _record(x.data[rows, idx], (x,), bw, "take_rows")


def pdist(h) -> Tensor:
    """All-pairs Euclidean distances between the rows of ``h``.

    The derivative at a zero distance is taken to be zero.
    """
    h = as_tensor(h)
    if h.ndim != 2:
        raise ShapeError(f"pdist: expected a 2-D matrix, got {h.shape}")
    diff = h.data[:, None, :] - h.data[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(dist > 0, (g + g.T) / dist, 0.0)
        return ((w[:, :, None] * diff).sum(axis=1),)

    return _record(dist, (h,), bw, "pdist")


# ---------------------------------------------------------------- backward

@dataclass
class Graph:
    """Nodes reachable from a root, in topological (creation) order."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> Graph:
        seen: dict[int, Tensor] = {}
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen or not node.requires_grad:
                continue
            seen[id(node)] = node
            stack.extend(node._parents)
        return cls(sorted(seen.values(), key=lambda t: t._index))

    def order(self, node: Tensor) -> int:
        return self.nodes.index(node)


def backward(loss: Tensor) -> Graph:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    graph = Graph.from_root(loss)
    if not loss.requires_grad:
        return graph
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return graph
