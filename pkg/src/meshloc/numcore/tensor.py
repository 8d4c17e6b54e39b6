"""Dense tensors with reverse-mode differentiation.

Every differentiable operation returns a new :class:`Tensor` that keeps a
reference to its inputs and a closure propagating the output gradient back
to them.  The compute graph is therefore implicit in the parent links;
:func:`graph_nodes` recovers it in topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes do not conform."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        parents: Sequence["Tensor"] = (),
        backward_fn: Callable[[np.ndarray], None] | None = None,
        op: str = "leaf",
    ):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    # ------------------------------------------------------------------
    @classmethod
    def from_op(cls, data, parents, backward_fn, op: str) -> "Tensor":
        """Create an op output; gradient tracking follows the parents."""
        needs = any(p.requires_grad for p in parents)
        return cls(data, requires_grad=needs, parents=parents if needs else (),
                   backward_fn=backward_fn if needs else None, op=op)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    # arithmetic -------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def __pow__(self, p: float):
        return power(self, p)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    # constants adopt the dtype of the tensor operand so float32 graphs stay float32
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, as_tensor(b, a.data.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return as_tensor(a, b.data.dtype), b
    return as_tensor(a), as_tensor(b)


def parameter(data, name: str | None = None, dtype=None) -> Tensor:
    arr = np.array(data, dtype=dtype or DEFAULT_DTYPE)
    return Tensor(arr, requires_grad=True, name=name)


# ----------------------------------------------------------------------
# graph traversal


def graph_nodes(output: Tensor) -> list[Tensor]:
    """All nodes reachable from ``output`` in topological order (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor, params: Mapping[str, Tensor] | Iterable[Tensor] | None = None):
    """Propagate d(output)/d(node) through the graph.

    ``output`` must hold a single value.  Gradients of earlier calls are
    discarded.  When ``params`` is a mapping, a ``{name: gradient}`` dict is
    returned in which parameters that do not influence the output get zeros.
    """
    if output.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    nodes = graph_nodes(output)
    for n in nodes:
        n.grad = None
    if params is not None:
        for p in (params.values() if isinstance(params, Mapping) else params):
            p.grad = None
    output.grad = np.ones_like(output.data)
    for node in reversed(nodes):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
    if isinstance(params, Mapping):
        return {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    return None


# ----------------------------------------------------------------------
# elementwise arithmetic with broadcasting


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return Tensor.from_op(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return Tensor.from_op(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor.from_op(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return Tensor.from_op(a.data / b.data, (a, b), bw, "div")


def power(x: Tensor, p: float) -> Tensor:
    def bw(g):
        x._accumulate(g * p * x.data ** (p - 1))

    return Tensor.from_op(x.data ** p, (x,), bw, "pow")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def bw(g):
        x._accumulate(g * out)

    return Tensor.from_op(out, (x,), bw, "exp")


def log(x: Tensor) -> Tensor:
    def bw(g):
        x._accumulate(g / x.data)

    return Tensor.from_op(np.log(x.data), (x,), bw, "log")


def tabs(x: Tensor) -> Tensor:
    def bw(g):
        x._accumulate(g * np.sign(x.data))

    return Tensor.from_op(np.abs(x.data), (x,), bw, "abs")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    mask = (x.data >= lo) & (x.data <= hi)

    def bw(g):
        x._accumulate(g * mask)

    return Tensor.from_op(np.clip(x.data, lo, hi), (x,), bw, "clip")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        x._accumulate(g * mask)

    return Tensor.from_op(np.where(mask, x.data, 0.0), (x,), bw, "relu")


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    scale = np.where(x.data > 0, 1.0, slope).astype(x.data.dtype)

    def bw(g):
        x._accumulate(g * scale)

    return Tensor.from_op(x.data * scale, (x,), bw, "leaky_relu")


SIGMOID_CLAMP = 30.0


def sigmoid(x: Tensor) -> Tensor:
    z = np.clip(x.data, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    out = 1.0 / (1.0 + np.exp(-z))

    def bw(g):
        x._accumulate(g * out * (1.0 - out))

    return Tensor.from_op(out, (x,), bw, "sigmoid")


def elementwise_activation(kind: str, x: Tensor, slope: float = 0.2) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# ----------------------------------------------------------------------
# reductions and shape manipulation


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return Tensor.from_op(out, (x,), bw, "sum")


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis, keepdims) * (1.0 / max(n, 1))


def reshape(x: Tensor, shape) -> Tensor:
    def bw(g):
        x._accumulate(g.reshape(x.shape))

    return Tensor.from_op(x.data.reshape(shape), (x,), bw, "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)

    def bw(g):
        x._accumulate(np.transpose(g, inv))

    return Tensor.from_op(np.transpose(x.data, axes), (x,), bw, "transpose")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items)


def getitem(x: Tensor, index) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate."""
    basic = _is_basic_index(index)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        x._accumulate(full)

    return Tensor.from_op(x.data[index], (x,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def norm(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at a zero vector is zero."""
    n = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    safe = np.where(n > 0, n, 1.0)
    out = n if keepdims else np.squeeze(n, axis=axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.where(n > 0, g * x.data / safe, 0.0))

    return Tensor.from_op(out, (x,), bw, "norm")


# ----------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}, inner dimensions {a.shape[-1]} != {b.shape[0]}")

    def bw(g):
        if a.requires_grad:
            if b.ndim == 1:
                a._accumulate(np.multiply.outer(g, b.data))
            else:
                a._accumulate(g @ b.data.T)
        if b.requires_grad:
            if a.ndim == 1:
                b._accumulate(np.multiply.outer(a.data, g))
            elif b.ndim == 1:
                b._accumulate(a.data.T @ g)
            else:
                b._accumulate(a.data.T @ g)

    return Tensor.from_op(a.data @ b.data, (a, b), bw, "matmul")


def apply_linear(W: Tensor, b: Tensor | None, x: Tensor) -> Tensor:
    """``W x + b`` for a vector ``x`` or row-wise for a matrix of inputs.

    ``W`` is (m, n); ``x`` is (n,) or (N, n); the result is (m,) or (N, m).
    """
    W, x = as_tensor(W), as_tensor(x)
    if W.ndim != 2:
        raise ShapeError(f"apply_linear: weight must be 2-d, got shape {W.shape}")
    m, n = W.shape
    if x.shape[-1] != n:
        raise ShapeError(f"apply_linear: weight is {m}x{n} but input has trailing dimension {x.shape[-1]}")
    if b is not None and tuple(b.shape) != (m,):
        raise ShapeError(f"apply_linear: bias shape {b.shape} does not match output size {m}")
    out = matmul(W, x) if x.ndim == 1 else matmul(x, transpose(W))
    return out if b is None else add(out, b)


# ----------------------------------------------------------------------
# segment operations (graph aggregation)


def segment_sum(x: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    segments = np.asarray(segments)
    out = np.zeros((n_segments,) + x.shape[1:], dtype=x.data.dtype)
    np.add.at(out, segments, x.data)

    def bw(g):
        x._accumulate(g[segments])

    return Tensor.from_op(out, (x,), bw, "segment_sum")


def segmented_softmax(values: Tensor, segments: np.ndarray, n_segments: int | None = None) -> Tensor:
    """Softmax over entries sharing a segment id, along axis 0.

    Extra trailing axes (e.g. attention heads) are normalized independently.
    """
    values = as_tensor(values)
    segments = np.asarray(segments, dtype=np.int64)
    if values.shape[0] == 0:
        return Tensor.from_op(values.data.copy(), (values,), lambda g: None, "segmented_softmax")
    if segments.shape[0] != values.shape[0]:
        raise ShapeError(f"segmented_softmax: {values.shape[0]} values but {segments.shape[0]} segment ids")
    if n_segments is None:
        n_segments = int(segments.max()) + 1
    vmax = np.full((n_segments,) + values.shape[1:], -np.inf, dtype=values.data.dtype)
    np.maximum.at(vmax, segments, values.data)
    e = np.exp(values.data - vmax[segments])
    denom = np.zeros_like(vmax)
    np.add.at(denom, segments, e)
    out = e / denom[segments]

    def bw(g):
        dot = np.zeros_like(vmax)
        np.add.at(dot, segments, g * out)
        values._accumulate(out * (g - dot[segments]))

    return Tensor.from_op(out, (values,), bw, "segmented_softmax")


# ----------------------------------------------------------------------
# normalization


def standardize_rows(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero mean, unit variance along the last axis of each row."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        x._accumulate(inv * (g - gm - xhat * gx))

    return Tensor.from_op(xhat, (x,), bw, "standardize_rows")


def custom_op(inputs: Sequence[Tensor], forward: np.ndarray, backward_fn, op: str = "custom") -> Tensor:
    """Wrap a precomputed forward value and a gradient rule into the graph.

    ``backward_fn(g)`` returns one gradient array (or None) per input.
    """

    def bw(g):
        grads = backward_fn(g)
        for t, gt in zip(inputs, grads):
            if gt is not None:
                t._accumulate(gt)

    return Tensor.from_op(forward, tuple(inputs), bw, op)
