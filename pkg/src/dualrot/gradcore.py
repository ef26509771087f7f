"""Minimal float64 tensors with reverse-mode differentiation.

Only the operations the segmentation model and its losses need are provided.
Graphs are built implicitly: every op output keeps references to its parents
and a closure mapping the output gradient to parent gradients.

>>> x = Tensor([2.0], requires_grad=True)
>>> backward(sum(x * x))  # doctest: +ELLIPSIS
Graph(...)
>>> x.grad
array([4.])
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels

EPS = 1e-7

_GRAD_ENABLED = True


class GradError(Exception):
    """Base class for autodiff errors."""


class ShapeError(GradError, ValueError):
    pass


class DomainError(GradError, ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "_consumed")
    # make ndarray (op) Tensor defer to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and 0 in arr.shape:
            raise ShapeError(f"tensor shape {arr.shape} has a zero-length axis")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable | None = _backward
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return pow_scalar(self, p)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (teacher forwards, evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, True, _parents=tuple(parents), _backward=backward_fn, op=op)


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0


def _binary_operands(a, b, op):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    # scalar operands receive the summed gradient
    if _is_scalar(t) and g.ndim:
        return np.asarray(g.sum())
    return g


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")

    def bw(g):
        return _reduce_to(g, a), _reduce_to(g, b)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")

    def bw(g):
        return _reduce_to(g, a), _reduce_to(-g, b)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")

    def bw(g):
        return _reduce_to(g * b.data, a), _reduce_to(g * a.data, b)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "div")
    if np.any(b.data == 0.0):
        raise DomainError("div: zero denominator (guard with an epsilon before dividing)")
    out = a.data / b.data

    def bw(g):
        return _reduce_to(g / b.data, a), _reduce_to(-g * out / b.data, b)

    return _make(out, (a, b), bw, "div")


def pow_scalar(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    if p != int(p) and np.any(a.data < 0):
        raise DomainError(f"pow_scalar: negative base {a.data.min()!r} with fractional exponent {p}")
    out = np.power(a.data, p)

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = p * np.power(a.data, p - 1.0)
        return (g * np.where(np.isfinite(d), d, 0.0),)

    return _make(out, (a,), bw, "pow_scalar")


def absolute(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (g * np.sign(a.data),)

    return _make(np.abs(a.data), (a,), bw, "abs")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        bad = a.data[a.data <= 0.0].flat[0]
        raise DomainError(f"log: non-positive input {bad!r}; clamp before taking logs")

    def bw(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), bw, "log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), bw, "sigmoid")


def relu(a, slope: float = 0.0) -> Tensor:
    """Rectifier; ``slope`` > 0 gives the leaky variant."""
    a = as_tensor(a)
    pos = a.data > 0
    out = np.where(pos, a.data, slope * a.data)

    def bw(g):
        return (np.where(pos, g, slope * g),)

    return _make(out, (a,), bw, "relu")


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        return (g * inside,)

    return _make(np.clip(a.data, lo, hi), (a,), bw, "clamp")


_UNARY = {"abs": absolute, "log": log, "sigmoid": sigmoid, "relu": relu}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name: binary ops take ``b``; pow_scalar takes the exponent,
    clamp a ``(lo, hi)`` pair, relu an optional slope."""
    if op in _BINARY:
        return _BINARY[op](a, b)
    if op == "pow_scalar":
        return pow_scalar(a, b)
    if op == "clamp":
        lo, hi = b
        return clamp(a, lo, hi)
    if op == "relu":
        return relu(a, 0.0 if b is None else b)
    if op in _UNARY:
        return _UNARY[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


# --------------------------------------------------------------------------
# reductions and reshapes
# --------------------------------------------------------------------------


def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise ShapeError(f"repeated axes {axes}")
    return tuple(sorted(out))


def sum(a, axes=None) -> Tensor:  # noqa: A001 - mirrors the op name
    a = as_tensor(a)
    ax = _norm_axes(axes, a.ndim)
    out = a.data.sum(axis=ax)

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, ax), a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a, axes=None) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.shape[i] for i in ax])) if ax else 1
    if count == 0:
        raise ShapeError("empty reduction")
    out = a.data.sum(axis=ax) / count

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, ax) / count, a.shape).copy(),)

    return _make(out, (a,), bw, "mean")


def reduce(op: str, a, axes=None) -> Tensor:
    if op == "sum":
        return sum(a, axes)
    if op == "mean":
        return mean(a, axes)
    raise ValueError(f"unknown reduction {op!r}")


def masked_mean(a, mask) -> Tensor:
    """Mean of ``a`` over positions where ``mask`` is true."""
    a = as_tensor(a)
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.shape:
        raise ShapeError(f"masked_mean: shape mismatch {a.shape} vs {m.shape}")
    count = int(m.sum())
    if count == 0:
        raise ShapeError("empty reduction")
    return sum(mul(a, m.astype(np.float64) / count))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), bw, "reshape")


# --------------------------------------------------------------------------
# convolution and upsampling
# --------------------------------------------------------------------------


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate ``x[N,C,H,W]`` with ``kernel[F,C,k,k]``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    f, kc, k, k2 = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d: input has {c} channels but kernel expects {kc} ({x.shape} vs {kernel.shape})")
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square with odd size, got {k}x{k2}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: bad stride {stride} / padding {padding}")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: output would be empty for input {x.shape}, k={k}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _kernels.im2col(xp, k, stride, ho, wo)
    wmat = kernel.data.reshape(f, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (f,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {f} filters")
        out = out + bias.data[None, :, None, None]
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def bw(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, f)
        gk = (gm.T @ cols).reshape(kernel.shape)
        gx = None
        if x.requires_grad:
            gxp = _kernels.col2im(gm @ wmat, xp.shape, k, stride, ho, wo)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make(out, parents, bw, "conv2d")


def upsample_nearest(x, factor: int) -> Tensor:
    x = as_tensor(x)
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest expects [N,C,H,W], got {x.shape}")
    if factor == 1:
        out = x.data.copy()
    else:
        out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    n, c, h, w = x.shape

    def bw(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _make(out, (x,), bw, "upsample_nearest")


# --------------------------------------------------------------------------
# backward
# --------------------------------------------------------------------------


@dataclass
class Graph:
    """Topologically ordered record of the ops reachable from a loss."""

    nodes: list[Tensor] = field(default_factory=list)
    grads: dict[int, np.ndarray] = field(default_factory=dict)

    def __repr__(self) -> str:
        return f"Graph(nodes={len(self.nodes)})"


def _toposort(root: Tensor) -> list[Tensor]:
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


def backward(loss: Tensor) -> Graph:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every requires_grad ancestor."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.size != 1 or loss.ndim > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GradError("backward already ran on this graph; rebuild the forward pass first")
    loss._consumed = True
    if not loss.requires_grad:
        return Graph()

    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    return Graph(nodes=order, grads=grads)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
