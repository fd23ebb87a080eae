"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable computation in the package (image synthesis, the
Siamese scorer, the adversarial controller) runs on this engine.  Design
constraints, in rough order of importance:

* 64-bit floats everywhere, so gradient checks can use tight tolerances.
* Deterministic forward passes: reductions delegate to numpy's fixed
  summation order, so identical inputs give bitwise identical outputs.
* Tape = creation order.  Every tensor carries a monotonically increasing
  node id; ``backward`` replays the reachable subgraph in exact reverse
  creation order, which is a valid reverse topological order because an
  op's inputs always exist before its output.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "ShapeError",
    "DomainError",
    "tensor",
    "parameter",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "sin",
    "cos",
    "softplus",
    "absolute",
    "tsum",
    "tmean",
    "reshape",
    "take_column",
    "batchnorm",
    "backward",
    "tape_order",
    "sgd_step",
    "zero_grads",
]

_node_ids = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class DomainError(ValueError):
    """Raised when an input lies outside an operation's documented domain."""


class Tensor:
    """A dense float64 array, optionally participating in the gradient tape.

    ``requires_grad`` marks leaves whose gradients the caller wants; tensors
    produced by ops inherit it from their inputs.  ``grad`` is allocated on
    demand during ``backward`` and accumulates additively across calls until
    cleared with ``zero_grads``.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "_nid")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple = (), backward_fn: Callable | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = parents
        self._backward = backward_fn
        self._nid = next(_node_ids)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def backward(self) -> None:
        backward(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # operator sugar; scalars and arrays are lifted to constant tensors
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Create a leaf tensor; rejects non-finite input."""
    t = Tensor(data, requires_grad=requires_grad)
    if not np.all(np.isfinite(t.data)):
        raise DomainError("leaf tensor contains non-finite values")
    return t


def parameter(data) -> Tensor:
    """A trainable leaf."""
    return tensor(data, requires_grad=True)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _result(data, parents: tuple, op: str, backward_fn: Callable | None) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, op=op, parents=parents, backward_fn=backward_fn)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out_data = a.data + b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(out_data, (a, b), "add", bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    out_data = a.data - b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(out_data, (a, b), "sub", bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    out_data = a.data * b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(out_data, (a, b), "mul", bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, -g)

    return _result(-a.data, (a,), "neg", bw)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant (no gradient w.r.t. ``c``)."""
    c = float(c)

    def bw(g):
        _accumulate(a, g * c)

    return _result(a.data * c, (a,), "scale", bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    out_data = np.where(mask, a.data, 0.0)

    def bw(g):
        _accumulate(a, g * mask)

    return _result(out_data, (a,), "relu", bw)


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)

    def bw(g):
        _accumulate(a, g * s * (1.0 - s))

    return _result(s, (a,), "sigmoid", bw)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def bw(g):
        _accumulate(a, g * (1.0 - t * t))

    return _result(t, (a,), "tanh", bw)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)

    def bw(g):
        _accumulate(a, g * e)

    return _result(e, (a,), "exp", bw)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive input")
    out_data = np.log(a.data)

    def bw(g):
        _accumulate(a, g / a.data)

    return _result(out_data, (a,), "log", bw)


def sin(a: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, g * np.cos(a.data))

    return _result(np.sin(a.data), (a,), "sin", bw)


def cos(a: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, -g * np.sin(a.data))

    return _result(np.cos(a.data), (a,), "cos", bw)


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), evaluated in the overflow-safe logaddexp form."""
    out_data = np.logaddexp(0.0, a.data)
    s = expit(a.data)

    def bw(g):
        _accumulate(a, g * s)

    return _result(out_data, (a,), "softplus", bw)


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def bw(g):
        _accumulate(a, g * sign)

    return _result(np.abs(a.data), (a,), "abs", bw)


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}"
        )
    out_data = a.data @ b.data

    def bw(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _result(out_data, (a, b), "matmul", bw)


def tsum(a: Tensor) -> Tensor:
    out_data = np.asarray(a.data.sum())

    def bw(g):
        _accumulate(a, np.full_like(a.data, float(np.reshape(g, ()))))

    return _result(out_data, (a,), "sum", bw)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out_data = np.asarray(a.data.sum() / n)

    def bw(g):
        _accumulate(a, np.full_like(a.data, float(np.reshape(g, ())) / n))

    return _result(out_data, (a,), "mean", bw)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"cannot reshape {a.shape} ({a.data.size} elements) to {shape}")
    out_data = a.data.reshape(shape)

    def bw(g):
        _accumulate(a, g.reshape(a.shape))

    return _result(out_data, (a,), "reshape", bw)


def take_column(a: Tensor, j: int) -> Tensor:
    """Column ``j`` of a 2-d tensor as a (B, 1) tensor; backward scatters."""
    if a.data.ndim != 2:
        raise ShapeError(f"take_column expects a 2-d tensor, got {a.shape}")
    if not 0 <= j < a.shape[1]:
        raise ShapeError(f"column {j} out of range for shape {a.shape}")
    out_data = a.data[:, j : j + 1].copy()

    def bw(g):
        full = np.zeros_like(a.data)
        full[:, j : j + 1] = g
        _accumulate(a, full)

    return _result(out_data, (a,), "take_column", bw)


def batchnorm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-feature batch normalization of a (B, D) tensor, batch statistics only.

    Population variance with an ``eps`` floor; no learnable scale or shift and
    no running averages.  Requires B >= 2 so the batch variance is defined.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"batchnorm expects a (B, D) tensor, got {x.shape}")
    B = x.shape[0]
    if B < 2:
        raise ShapeError(f"batchnorm needs a batch of at least 2 rows, got {B}")
    mu = x.data.mean(axis=0)
    var = x.data.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xn = (x.data - mu) * inv_std

    def bw(g):
        # standard batchnorm backward through mean and variance
        gm = g.mean(axis=0)
        gxn = (g * xn).mean(axis=0)
        _accumulate(x, (g - gm - xn * gxn) * inv_std)

    return _result(xn, (x,), "batchnorm", bw)


# ---------------------------------------------------------------------------
# backward pass and optimizer


def _collect(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    out: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        out.append(t)
        stack.extend(t._parents)
    return out


def tape_order(root: Tensor) -> list[Tensor]:
    """The subgraph reachable from ``root`` in reverse creation order."""
    return sorted(_collect(root), key=lambda t: t._nid, reverse=True)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every ``requires_grad`` tensor reachable from ``loss``.

    ``loss`` must be a scalar.  Tensors feeding several consumers receive the
    sum of all branch adjoints; repeated calls keep accumulating.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes = tape_order(loss)
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += np.ones_like(loss.data)
    for t in nodes:
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def sgd_step(params: Iterable[Tensor], lr: float, weight_decay: float = 0.0) -> bool:
    """In-place p <- p - lr * (grad + weight_decay * p).

    Returns False (and leaves every parameter untouched) if any gradient is
    non-finite; parameters without a gradient are skipped.
    """
    if lr < 0.0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    plist = list(params)
    for p in plist:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            return False
    for p in plist:
        if p.grad is None:
            continue
        p.data -= lr * (p.grad + weight_decay * p.data)
    return True
