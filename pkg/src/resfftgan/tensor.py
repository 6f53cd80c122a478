"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation builds a node that records its parents and a
closure mapping the output gradient to one gradient per parent.  Calling
:meth:`Tensor.backward` on a scalar walks the graph in reverse topological
order and accumulates gradients additively, so shared subexpressions are
handled correctly.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """N-dimensional float64 array that can take part in autodiff.

    ``grad`` is populated by :meth:`backward` on leaves that require
    gradients.  Non-leaf tensors keep their parents and backward closure in
    ``_parents`` / ``_backward``.
    """

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = ""

    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"],
              backward: BackwardFn, op: str) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        return out

    # ------------------------------------------------------------------ misc
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -------------------------------------------------------------- autodiff
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Backpropagate from this scalar into every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor without autodiff history")

        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # ------------------------------------------------------------- operators
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

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)


def _raise_item(t: Tensor) -> float:
    raise ShapeError(f"item() needs a single element, got shape {t.shape}")


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
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


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------- elementwise
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return Tensor._make(a.data + b.data, (a, b), backward, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return Tensor._make(a.data - b.data, (a, b), backward, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(a.data * b.data, (a, b), backward, "mul")


def scale(a: ArrayLike, factor: float) -> Tensor:
    """Multiply by a python scalar."""
    return mul(a, float(factor))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data / b.data

    def backward(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(out, (a, b), backward, "div")


def power(a: ArrayLike, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)

    def backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return Tensor._make(a.data ** p, (a,), backward, "pow")


def square(a: ArrayLike) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (2.0 * g * a.data,)

    return Tensor._make(a.data * a.data, (a,), backward, "square")


def sqrt(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        return (0.5 * g / out,)

    return Tensor._make(out, (a,), backward, "sqrt")


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return Tensor._make(out, (a,), backward, "exp")


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (g / a.data,)

    return Tensor._make(np.log(a.data), (a,), backward, "log")


def tabs(a: ArrayLike) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (g * np.sign(a.data),)

    return Tensor._make(np.abs(a.data), (a,), backward, "abs")


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return Tensor._make(out, (a,), backward, "tanh")


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor._make(a.data * mask, (a,), backward, "relu")


def leaky_relu(a: ArrayLike, slope: float = LEAKY_SLOPE) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)

    def backward(g):
        return (g * factor,)

    return Tensor._make(a.data * factor, (a,), backward, "leaky_relu")


# ---------------------------------------------------------------- reductions
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _expand_reduced(g: np.ndarray, shape, axes, keepdims: bool) -> np.ndarray:
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)

    def backward(g):
        return (np.array(_expand_reduced(g, a.shape, axes, keepdims)),)

    return Tensor._make(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward, "sum")


def mean(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1

    def backward(g):
        return (np.array(_expand_reduced(g, a.shape, axes, keepdims)) / count,)

    return Tensor._make(a.data.mean(axis=axes, keepdims=keepdims), (a,), backward, "mean")


def logsumexp(a: ArrayLike, axis: int, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = np.log(total) + m
    weights = shifted / total

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return Tensor._make(out if keepdims else np.squeeze(out, axis=axis), (a,), backward, "logsumexp")


def softmax(a: ArrayLike, axis: int = 1) -> Tensor:
    """Softmax along ``axis`` (the class axis for parsing logits)."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (a,), backward, "softmax")


def log_softmax(a: ArrayLike, axis: int = 1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (a,), backward, "log_softmax")


# ------------------------------------------------------------- shape tricks
def reshape(a: ArrayLike, shape) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (g.reshape(a.shape),)

    return Tensor._make(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a: ArrayLike, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = np.argsort(axes)

    def backward(g):
        return (g.transpose(inverse),)

    return Tensor._make(a.data.transpose(axes), (a,), backward, "transpose")


def getitem(a: ArrayLike, index) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return Tensor._make(a.data[index], (a,), backward, "getitem")


def concat(tensors: Iterable[ArrayLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(
                f"concat along axis {axis}: shapes {tensors[0].shape} and {t.shape} disagree")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis),
                        tensors, backward, "concat")


# ------------------------------------------------------------------- linalg
def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(a.data @ b.data, (a, b), backward, "matmul")


# ------------------------------------------------------------------ spatial
def pad2d(x: ArrayLike, pad: int, mode: str = "zeros") -> Tensor:
    """Pad the last two axes by ``pad`` on every side ('zeros' or 'edge')."""
    x = as_tensor(x)
    if pad == 0:
        return x
    if mode not in ("zeros", "edge"):
        raise ValueError(f"unknown padding mode {mode!r}")
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    out = np.pad(x.data, widths, mode="constant" if mode == "zeros" else "edge")

    def backward(g):
        if mode == "zeros":
            return (g[..., pad:-pad, pad:-pad],)
        g = g.copy()
        g[..., pad, :] += g[..., :pad, :].sum(axis=-2)
        g[..., -pad - 1, :] += g[..., -pad:, :].sum(axis=-2)
        g = g[..., pad:-pad, :]
        g[..., :, pad] += g[..., :, :pad].sum(axis=-1)
        g[..., :, -pad - 1] += g[..., :, -pad:].sum(axis=-1)
        return (g[..., :, pad:-pad],)

    return Tensor._make(out, (x,), backward, "pad2d")


def conv_output_extent(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride:
        raise ShapeError(
            f"non-integral conv output extent: ({size} + 2*{pad} - {k}) / {stride} + 1")
    return span // stride + 1


def conv2d(x: ArrayLike, w: ArrayLike, b: Optional[ArrayLike] = None,
           stride: int = 1, pad: int = 0, pad_mode: str = "zeros") -> Tensor:
    """2D cross-correlation (no kernel flip) over ``[B, C, H, W]`` inputs.

    Implemented as one GEMM over channel-major im2col columns; the columns
    are kept for the weight gradient.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects x[B,C,H,W] and w[O,C,k,k], got {x.shape}, {w.shape}")
    n_out, n_in, kh, kw = w.shape
    if x.shape[1] != n_in:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d needs an odd square kernel, got {kh}x{kw}")
    k = kh
    batch, _, h, wd = x.shape
    ho = conv_output_extent(h, k, stride, pad)
    wo = conv_output_extent(wd, k, stride, pad)
    if pad and pad_mode != "zeros":
        x = pad2d(x, pad, pad_mode)
        pad = 0
    hp, wp = x.shape[2] + 2 * pad, x.shape[3] + 2 * pad

    xt = x.data.transpose(1, 0, 2, 3)
    if pad:
        xt = np.pad(xt, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    if k == 1 and stride == 1:
        cols = np.ascontiguousarray(xt).reshape(n_in, -1)
    else:
        cols = np.empty((n_in, k, k, batch, ho, wo))
        for i in range(k):
            for j in range(k):
                cols[:, i, j] = xt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
        cols = cols.reshape(n_in * k * k, -1)
    wmat = w.data.reshape(n_out, -1)
    out = (wmat @ cols).reshape(n_out, batch, ho, wo)
    if b is not None:
        b = as_tensor(b)
        out += b.data.reshape(-1, 1, 1, 1)
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    parents = [x, w] if b is None else [x, w, b]

    def backward(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(n_out, -1)
        gw = gx = gb = None
        if w.requires_grad:
            gw = (gt @ cols.T).reshape(w.shape)
        if x.requires_grad:
            gcols = wmat.T @ gt
            if k == 1 and stride == 1:
                gxt = gcols.reshape(n_in, batch, hp, wp)
            else:
                gcols = gcols.reshape(n_in, k, k, batch, ho, wo)
                gxt = np.zeros((n_in, batch, hp, wp))
                for i in range(k):
                    for j in range(k):
                        gxt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
            if pad:
                gxt = gxt[:, :, pad:-pad, pad:-pad]
            gx = np.ascontiguousarray(gxt.transpose(1, 0, 2, 3))
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb)[:len(parents)]

    return Tensor._make(out, parents, backward, "conv2d")


def upsample2x(x: ArrayLike) -> Tensor:
    """Nearest-neighbour 2x upsampling of the last two axes."""
    x = as_tensor(x)
    out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(g):
        s = g.shape
        return (g.reshape(*s[:-2], s[-2] // 2, 2, s[-1] // 2, 2).sum(axis=(-3, -1)),)

    return Tensor._make(out, (x,), backward, "upsample2x")


def avgpool(x: ArrayLike, k: int = 2) -> Tensor:
    """Non-overlapping ``k x k`` average pooling of the last two axes."""
    x = as_tensor(x)
    *lead, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"avgpool({k}) needs extents divisible by {k}, got {x.shape}")
    out = x.data.reshape(*lead, h // k, k, w // k, k).mean(axis=(-3, -1))

    def backward(g):
        return (g.repeat(k, axis=-2).repeat(k, axis=-1) / (k * k),)

    return Tensor._make(out, (x,), backward, "avgpool")


class Parameter(Tensor):
    """A named tensor owned by a network."""

    def __init__(self, data: ArrayLike, name: str = "", learnable: bool = True):
        super().__init__(data, requires_grad=learnable)
        self.name = name
        self.learnable = learnable

    @property
    def value(self) -> Tensor:
        return self

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, learnable={self.learnable})"
