"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps a C-contiguous float array and records the operations
applied to it; ``backward`` replays the tape in reverse to accumulate
cotangents. The op set is exactly what the loss graph needs: broadcast
arithmetic, matmul, reshape/transpose/slicing, reductions, the stable
exp/log family, fused softmax / masked logsumexp, and L2 row
normalization with an explicit zero-norm rule.

Compute dtype is float32 by default; every op preserves the dtype of its
inputs, so the same graph runs in float64 when fed float64 leaves (used
by the finite-difference test oracles).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractViolationError, NumericalError

_GRAD_ENABLED = True


def _contiguous(arr: np.ndarray) -> np.ndarray:
    # np.ascontiguousarray promotes 0-d to 1-d; preserve rank.
    return arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the context (evaluation paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A dense array node in the differentiation graph.

    ``data`` is always a C-contiguous float ndarray (row-major), so the
    flat buffer matches the on-disk layout written by ``numerics.io``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, *, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = _contiguous(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    # -- construction -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: Sequence["Tensor"], vjp) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    # -- basic introspection -------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    # -- operators ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, dtype=self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other, dtype=self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def __pow__(self, exponent):
        return power(self, exponent)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(value, *, dtype=None) -> Tensor:
    """Wrap ``value`` as a constant Tensor unless it already is one.

    An explicit ``dtype`` coerces raw values (existing Tensors pass
    through unchanged); the default keeps float32/float64 as-is and casts
    everything else to float32.
    """
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def parameter(data, *, dtype=None) -> Tensor:
    """A leaf Tensor that receives gradient."""
    return Tensor(data, requires_grad=True, dtype=dtype)


# -- backward pass ------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS: graphs from a full training step exceed the default
    # Python recursion limit.
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
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable leaf.

    ``root`` must be a finite scalar; a non-finite root is a hard error
    because cotangents would be meaningless.
    """
    if root.data.size != 1:
        raise ContractViolationError(
            f"backward requires a scalar root, got shape {root.data.shape}"
        )
    if not np.isfinite(root.data).all():
        raise NumericalError("backward called on a non-finite scalar")
    if not root.requires_grad:
        return
    root.grad = np.ones_like(root.data)
    for node in reversed(_topo_order(root)):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g
        # Interior cotangents are not part of the result; free them.
        if node is not root and node._parents:
            node.grad = None


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- broadcasting helper -------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic ----------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._from_op(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor._from_op(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return Tensor._from_op(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    out = a.data / b.data

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return Tensor._from_op(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading dims."""
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor._from_op(out, (a, b), vjp)


def power(a, exponent: float) -> Tensor:
    """Elementwise constant power."""
    a = as_tensor(a)
    e = float(exponent)
    out = a.data**e

    def vjp(g):
        return (g * e * a.data ** (e - 1.0),)

    return Tensor._from_op(out, (a,), vjp)


# -- shape manipulation ---------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = _contiguous(a.data.reshape(shape))

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return Tensor._from_op(out, (a,), vjp)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    out = _contiguous(a.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (_contiguous(g.transpose(inverse)),)

    return Tensor._from_op(out, (a,), vjp)


def getitem(a, index) -> Tensor:
    """Basic indexing (ints and slices); backward scatters into zeros."""
    a = as_tensor(a)
    out = _contiguous(a.data[index])

    def vjp(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return Tensor._from_op(out, (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractViolationError("concat of an empty sequence")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        grads = []
        for i, t in enumerate(tensors):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(_contiguous(g[tuple(sl)]))
        return tuple(grads)

    return Tensor._from_op(out, tuple(tensors), vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractViolationError("stack of an empty sequence")
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        pieces = np.split(g, len(tensors), axis=axis)
        return tuple(_contiguous(np.squeeze(p, axis=axis)) for p in pieces)

    return Tensor._from_op(out, tuple(tensors), vjp)


# -- reductions -----------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).astype(a.dtype, copy=True),)
        gx = g
        if not keepdims:
            gx = np.expand_dims(gx, axis)
        return (np.broadcast_to(gx, a.data.shape).astype(a.dtype, copy=True),)

    return Tensor._from_op(np.asarray(out), (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in np.atleast_1d(axis)]
    )
    inv = 1.0 / float(count)

    def vjp(g):
        gx = g
        if axis is not None and not keepdims:
            gx = np.expand_dims(gx, axis)
        return (
            (np.broadcast_to(gx, a.data.shape) * np.asarray(inv, dtype=a.dtype)).astype(
                a.dtype, copy=False
            ),
        )

    return Tensor._from_op(np.asarray(out), (a,), vjp)


# -- elementwise nonlinearities -------------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return Tensor._from_op(out, (a,), vjp)


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore"):
        out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return Tensor._from_op(out, (a,), vjp)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return Tensor._from_op(out, (a,), vjp)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(a) -> Tensor:
    """Tanh-approximation GELU (self-contained, smooth everywhere)."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return (g * d.astype(x.dtype, copy=False),)

    return Tensor._from_op(out.astype(x.dtype, copy=False), (a,), vjp)


def softplus(a) -> Tensor:
    """log(1 + exp(x)), computed stably; derivative is sigmoid(x)."""
    a = as_tensor(a)
    out = np.logaddexp(np.asarray(0.0, dtype=a.dtype), a.data)

    def vjp(g):
        sig = 1.0 / (1.0 + np.exp(-a.data))
        return (g * sig.astype(a.dtype, copy=False),)

    return Tensor._from_op(out.astype(a.dtype, copy=False), (a,), vjp)


def clamp_min(a, floor: float) -> Tensor:
    """max(x, floor); gradient is zero at and below the boundary."""
    a = as_tensor(a)
    f = np.asarray(floor, dtype=a.dtype)
    out = np.maximum(a.data, f)

    def vjp(g):
        return (g * (a.data > f).astype(a.dtype),)

    return Tensor._from_op(out, (a,), vjp)


def absolute(a) -> Tensor:
    """|x| with subgradient 0 at x == 0."""
    a = as_tensor(a)
    out = np.abs(a.data)

    def vjp(g):
        return (g * np.sign(a.data),)

    return Tensor._from_op(out, (a,), vjp)


# -- fused numerical kernels ------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    """Max-shifted softmax; tolerates -inf entries (they get probability 0)."""
    a = as_tensor(a)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    z = e.sum(axis=axis, keepdims=True)
    out = (e / z).astype(x.dtype, copy=False)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return Tensor._from_op(out, (a,), vjp)


def logsumexp(a, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-shifted log-sum-exp along ``axis``.

    ``mask`` marks entries to exclude (True = excluded); they are set to
    -inf before exponentiation, so they contribute exp(.) = 0 and receive
    zero gradient. A fully excluded row yields -inf.
    """
    a = as_tensor(a)
    x = a.data
    if x.shape[axis] == 0:
        raise ContractViolationError("logsumexp over an empty axis")
    if mask is not None:
        x = np.where(mask, -np.inf, x)
    m = np.max(x, axis=axis, keepdims=True)
    # Rows that are entirely -inf (fully masked) yield -inf; NaN or +inf
    # inputs must propagate rather than be mistaken for masked rows.
    all_masked = m == -np.inf
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(invalid="ignore"):
        e = np.exp(x - m_safe)
    z = e.sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = np.where(all_masked, -np.inf, m_safe + np.log(z))
    out = _contiguous(np.squeeze(out, axis=axis).astype(a.dtype, copy=False))

    def vjp(g):
        with np.errstate(invalid="ignore"):
            w = np.where(all_masked, 0.0, e / z)
        return ((np.expand_dims(g, axis) * w).astype(a.dtype, copy=False),)

    return Tensor._from_op(out, (a,), vjp)


def l2_normalize(a, axis: int = -1) -> Tensor:
    """x / ||x|| along ``axis``; rows with zero norm map to zero vectors.

    The zero-norm rule makes cosine similarities of degenerate embeddings
    come out as 0 instead of NaN; those rows also get zero gradient.
    """
    a = as_tensor(a)
    x = a.data
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    safe = np.where(norm > 0.0, norm, 1.0)
    out = (x / safe).astype(x.dtype, copy=False)
    nonzero = norm > 0.0

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        gx = (g - out * dot) / safe
        return (np.where(nonzero, gx, 0.0).astype(x.dtype, copy=False),)

    return Tensor._from_op(out, (a,), vjp)


def gather_rows(a, indices: np.ndarray) -> Tensor:
    """out[i] = a[i, indices[i]] for a 2-D tensor; backward scatters."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ContractViolationError("gather_rows expects a 2-D tensor")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or idx.shape[0] != a.data.shape[0]:
        raise ContractViolationError("gather_rows index length must match rows")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[1]):
        raise ContractViolationError("gather_rows index out of range")
    rows = np.arange(a.data.shape[0])
    out = _contiguous(a.data[rows, idx])

    def vjp(g):
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        return (full,)

    return Tensor._from_op(out, (a,), vjp)
