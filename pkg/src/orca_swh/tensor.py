"""Dense tensors with reverse-mode automatic differentiation.

Every learnable computation in the package is expressed with :class:`Tensor`.
The graph is built while the forward pass runs (define-by-run) and is
discarded after :meth:`Tensor.backward`.

Arithmetic defaults to 32-bit floats.  Gradient checks switch to 64-bit with
:func:`precision` or by exporting ``ORCA_F64=1``.
"""
from __future__ import annotations

import os
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "ShapeError", "NumericError", "precision", "default_dtype",
    "as_tensor", "concat", "split", "stack", "broadcast_to", "softmax",
    "layer_norm", "relu", "sigmoid", "tanh", "gelu", "matmul",
    "finite_diff_gradient", "finite_diff_at",
]


class ShapeError(ValueError):
    """Raised when operand shapes violate a primitive's contract."""


class NumericError(ArithmeticError):
    """Raised when a function evaluates to a non-finite value."""


_dtype_stack: list[np.dtype] = []


def default_dtype() -> np.dtype:
    if _dtype_stack:
        return _dtype_stack[-1]
    if os.environ.get("ORCA_F64", "") == "1":
        return np.dtype(np.float64)
    return np.dtype(np.float32)


@contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    _dtype_stack.append(np.dtype(dtype))
    try:
        yield
    finally:
        _dtype_stack.pop()


class Tensor:
    """An n-dimensional float array that records how it was computed.

    ``grad`` is filled in by :meth:`backward` for tensors created with
    ``requires_grad=True``.  Results of operations only join the graph when
    at least one operand requires a gradient, so frozen sub-computations cost
    nothing extra.
    """

    __array_priority__ = 100.0
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        self.data = np.asarray(data, dtype=dtype or default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
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
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    # -- graph ------------------------------------------------------------
    def backward(self, inputs: Iterable[Tensor] | None = None) -> None:
        """Populate ``grad`` on every leaf that requires one.

        Leaf gradients are overwritten, not accumulated.  Tensors listed in
        ``inputs`` that the loss does not depend on get a zero gradient.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {self.shape}")
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        reached: set[int] = set()
        for node in reversed(_toposort(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g
                    reached.add(id(node))
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        for t in inputs or ():
            if id(t) not in reached:
                t.grad = np.zeros_like(t.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return _add(self, _lift(other, self))

    def __radd__(self, other):
        return _add(_lift(other, self), self)

    def __sub__(self, other):
        return _sub(self, _lift(other, self))

    def __rsub__(self, other):
        return _sub(_lift(other, self), self)

    def __mul__(self, other):
        return _mul(self, _lift(other, self))

    def __rmul__(self, other):
        return _mul(_lift(other, self), self)

    def __truediv__(self, other):
        return _div(self, _lift(other, self))

    def __rtruediv__(self, other):
        return _div(_lift(other, self), self)

    def __neg__(self):
        return _result(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("pow: only constant exponents are supported")
        x = self.data
        return _result(x ** exponent, (self,), lambda g: (g * exponent * x ** (exponent - 1),), "pow")

    def __matmul__(self, other):
        return matmul(self, _lift(other, self))

    def __rmatmul__(self, other):
        return matmul(_lift(other, self), self)

    def __getitem__(self, index):
        if isinstance(index, Tensor):
            index = index.data
        shape, dtype = self.shape, self.dtype
        basic = _is_basic_index(index)

        def bw(g):
            full = np.zeros(shape, dtype=dtype)
            if basic:
                full[index] = g
            else:
                np.add.at(full, index, g)
            return (full,)

        return _result(self.data[index], (self,), bw, "getitem")

    # -- shape ops --------------------------------------------------------
    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        try:
            out = self.data.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"reshape: cannot view {src} as {shape}") from exc
        return _result(out, (self,), lambda g: (g.reshape(src),), "reshape")

    def flatten(self) -> Tensor:
        return self.reshape(-1)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        if sorted(a % self.ndim for a in axes) != list(range(self.ndim)):
            raise ShapeError(f"transpose: axes {axes} are not a permutation of {self.ndim} axes")
        inverse = tuple(np.argsort([a % self.ndim for a in axes]))
        return _result(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),), "transpose")

    def swapaxes(self, a: int, b: int) -> Tensor:
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(axes)

    @property
    def T(self) -> Tensor:
        return self.transpose()

    # -- reductions -------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        axis = _check_axis("sum", axis, self.ndim)
        shape = self.shape

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return _result(self.data.sum(axis=axis, keepdims=keepdims), (self,), bw, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        axis = _check_axis("mean", axis, self.ndim)
        if axis is None:
            count = self.size
        else:
            count = int(np.prod([self.shape[a] for a in axis]))
        if count == 0:
            raise ShapeError(f"mean: reduced axes {axis} of shape {self.shape} are empty")
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- elementwise ------------------------------------------------------
    def relu(self) -> Tensor:
        return relu(self)

    def sigmoid(self) -> Tensor:
        return sigmoid(self)

    def tanh(self) -> Tensor:
        return tanh(self)

    def exp(self) -> Tensor:
        out = np.exp(self.data)
        return _result(out, (self,), lambda g: (g * out,), "exp")


# ---------------------------------------------------------------------------
# graph helpers


def _result(data, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data)
    out.grad = None
    out.name = None
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, finished = stack.pop()
        if finished:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def _is_basic_index(index) -> bool:
    # basic indexing never repeats an element, so plain assignment inverts it
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), dtype=like.dtype)


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=requires_grad)


def _check_axis(prim: str, axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for a in axes:
        if not -ndim <= a < ndim:
            raise ShapeError(f"{prim}: axis {a} out of range for a {ndim}-d tensor")
    return tuple(a % ndim for a in axes)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(prim: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{prim}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# primitives


def _add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def _sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def _mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("mul", a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), bw, "mul")


def _div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("div", a, b)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data / b.data, (a, b), bw, "div")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (both operands ≥ 2-d)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner dimensions differ (left axis -1 has {a.shape[-1]}, "
            f"right axis -2 has {b.shape[-2]})")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch axes {a.shape[:-2]} and {b.shape[:-2]} do not broadcast") from None

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), bw, "matmul")


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU, as used by GPT-2."""
    v = x.data
    c = x.dtype.type(_GELU_C)
    v2 = v * v
    t = np.tanh(c * (v + x.dtype.type(0.044715) * v2 * v))
    out = 0.5 * v * (1.0 + t)

    def bw(g):
        dinner = c * (1.0 + x.dtype.type(3 * 0.044715) * v2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner),)

    return _result(out, (x,), bw, "gelu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _check_axis("softmax", axis, x.ndim)[0]
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=ax, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return _result(out, (x,), bw, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(
            f"layer_norm: gamma {gamma.shape} and beta {beta.shape} must both be ({n},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx = gb = gg = None
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, n).sum(axis=0)
        if beta.requires_grad:
            gb = g.reshape(-1, n).sum(axis=0)
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _result(out.astype(x.dtype), (x, gamma, beta), bw, "layer_norm")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    ndim = tensors[0].ndim
    ax = _check_axis("concat", axis, ndim)[0]
    for i, t in enumerate(tensors):
        if t.ndim != ndim:
            raise ShapeError(f"concat: operand {i} has {t.ndim} axes, expected {ndim}")
        for d in range(ndim):
            if d != ax and t.shape[d] != tensors[0].shape[d]:
                raise ShapeError(
                    f"concat: operand {i} has extent {t.shape[d]} on axis {d}, "
                    f"expected {tensors[0].shape[d]} (concatenating along axis {ax})")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax)
                     for i in range(len(tensors)))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw, "concat")


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    ax = _check_axis("split", axis, x.ndim)[0]
    if sum(sizes) != x.shape[ax]:
        raise ShapeError(f"split: sizes {list(sizes)} do not sum to extent {x.shape[ax]} of axis {ax}")
    out, start = [], 0
    for n in sizes:
        idx = [slice(None)] * x.ndim
        idx[ax] = slice(start, start + n)
        out.append(x[tuple(idx)])
        start += n
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis if axis >= 0 else axis + tensors[0].ndim + 1
    return concat([t.reshape(t.shape[:ax] + (1,) + t.shape[ax:]) for t in tensors], axis=ax)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    return _result(out, (x,), lambda g: (_unbroadcast(g, x.shape),), "broadcast_to")


# ---------------------------------------------------------------------------
# finite differences (test oracle)


def _scalar(value) -> float:
    v = value.data if isinstance(value, Tensor) else np.asarray(value)
    if v.size != 1:
        raise ShapeError(f"finite difference: function must return a scalar, got shape {v.shape}")
    v = float(v.reshape(-1)[0])
    if not np.isfinite(v):
        raise NumericError(f"finite difference: function returned {v}")
    return v


def finite_diff_at(f: Callable, x, flat_indices: Iterable[int], h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at the given flat coordinates of ``x``."""
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    flat = base.reshape(-1)
    out = []
    with precision(np.float64):
        for i in flat_indices:
            old = flat[i]
            flat[i] = old + h
            fp = _scalar(f(Tensor(base.copy())))
            flat[i] = old - h
            fm = _scalar(f(Tensor(base.copy())))
            flat[i] = old
            out.append((fp - fm) / (2 * h))
    return np.asarray(out, dtype=np.float64)


def finite_diff_gradient(f: Callable, x, h: float = 1e-5) -> Tensor:
    """Central-difference estimate of d f / d x for every coordinate of ``x``."""
    base = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    est = finite_diff_at(f, base, range(base.size), h)
    return Tensor(est.reshape(base.shape), dtype=np.float64)
