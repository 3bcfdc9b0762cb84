"""Dense f64 tensors with recorded-operation reverse-mode differentiation.

Every primitive returns a new :class:`Tensor` and, when any operand requires
gradients, records the operand references plus a vector-Jacobian closure on
the result. A :class:`Tape` is the topologically ordered record of those
primitives reachable from a root; ``backward`` replays it in reverse. Replays
are pure: running backward twice on an unchanged tape produces bit-identical
gradients.

Conventions baked in here and relied on elsewhere:
  - all data is float64, row-major;
  - broadcasting follows numpy; backward sums gradients over broadcast axes;
  - kinks use subgradient zero (``sign(0) == 0``, relu'(0) == 0, clip passes
    gradient only strictly inside the interval).
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_COUNTER = itertools.count()


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "vjp", "uid")

    # force `ndarray <op> Tensor` to dispatch to our reflected operators
    __array_ufunc__ = None

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        *,
        op: str = "leaf",
        parents: tuple["Tensor", ...] = (),
        vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self.uid = next(_COUNTER)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A leaf view of the same data with gradient tracking cut."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, grad={self.requires_grad})"

    # arithmetic sugar; the module-level functions hold the actual rules
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def sum(self, axis=None):
        return tsum(self, axis=axis)

    def mean(self, axis=None):
        return tmean(self, axis=axis)

    def reshape(self, shape):
        return reshape(self, shape)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum an upstream gradient back down to the operand's shape."""
    grad = np.asarray(grad, dtype=np.float64)
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(data, op, parents: tuple[Tensor, ...], vjp) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, op=op, parents=parents, vjp=vjp)
    return Tensor(data, op=op)


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return _make(out, "add", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _make(out, "sub", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return _make(
        out,
        "mul",
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data
    return _make(
        out,
        "div",
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _make(out, "matmul", (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, "square", (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, "sqrt", (a,), lambda g: (g / (2.0 * out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def powi(a: Tensor, n: int) -> Tensor:
    """Integer power, elementwise. Backward is n * a**(n-1)."""
    if not isinstance(n, int) or n < 1:
        raise ValueError(f"powi expects a positive integer exponent, got {n!r}")
    out = a.data**n
    return _make(out, "powi", (a,), lambda g: (g * n * a.data ** (n - 1),))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _make(out, "relu", (a,), lambda g: (g * (a.data > 0.0),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch on sign so neither exp argument can overflow
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a: Tensor) -> Tensor:
    sig = _sigmoid(np.asarray(a.data, dtype=np.float64))
    out = a.data * sig
    return _make(out, "silu", (a,), lambda g: (g * (sig * (1.0 + a.data * (1.0 - sig))),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def absolute(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), "abs", (a,), lambda g: (g * np.sign(a.data),))


def sign(a: Tensor) -> Tensor:
    """Elementwise sign with sign(0) == 0; piecewise constant, zero gradient."""
    return _make(np.sign(a.data), "sign", (a,), lambda g: (np.zeros_like(a.data),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)
    return _make(out, "clip", (a,), lambda g: (g * inside,))


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    out = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(np.float64, copy=True),)
        ge = np.expand_dims(g, axis)
        return (np.broadcast_to(ge, a.shape).astype(np.float64, copy=True),)

    return _make(out, "sum", (a,), vjp)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    out = a.data.mean(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).astype(np.float64, copy=True),)
        ge = np.expand_dims(g / count, axis)
        return (np.broadcast_to(ge, a.shape).astype(np.float64, copy=True),)

    return _make(out, "mean", (a,), vjp)


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = np.broadcast_to(a.data, shape).astype(np.float64, copy=True)
    return _make(out, "broadcast", (a,), lambda g: (_unbroadcast(g, a.shape),))


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(a.shape),))


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = tuple(parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _make(out, "concat", parts, vjp)


# ---------------------------------------------------------------------------
# tape and backward


class Tape:
    """Topologically ordered record of the primitives reachable from a root.

    Every operand precedes its consumer. The order is a deterministic function
    of the graph (depth-first over parent links), so repeated traces of the
    same root coincide.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.uid in seen:
                continue
            seen.add(node.uid)
            stack.append((node, True))
            for p in node.parents:
                if p.uid not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(
    loss: Tensor,
    params: Iterable[Tensor] | None = None,
    tape: Tape | None = None,
) -> list[np.ndarray]:
    """Gradients of a scalar loss with respect to ``params``.

    Pure given the tape: accumulators are rebuilt on every call and ``.grad``
    attributes are overwritten, never summed across calls. With ``params``
    omitted, every grad-required leaf in the tape receives its ``.grad`` and
    the list is returned in tape order.
    """
    if loss.data.ndim != 0 and loss.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = Tape.trace(loss)
    if not tape.nodes:
        raise ValueError("backward expects a non-empty tape")

    grads: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(node.uid)
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad:
                continue
            acc = grads.get(parent.uid)
            grads[parent.uid] = pg.copy() if acc is None else acc + pg

    for node in tape.nodes:
        if node.requires_grad and not node.parents:
            hit = grads.get(node.uid)
            node.grad = hit if hit is not None else np.zeros_like(node.data)

    if params is None:
        return [
            grads.get(n.uid, np.zeros_like(n.data))
            for n in tape.nodes
            if n.requires_grad and not n.parents
        ]
    return [grads.get(p.uid, np.zeros_like(p.data)) if p.requires_grad else np.zeros_like(p.data) for p in params]
