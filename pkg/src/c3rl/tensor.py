"""Reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable operation appends a node to the active :class:`Tape`.
:func:`backward` walks the tape in strict reverse append order, so a node's
inputs are always visited after it. The tape is meant to live for one
training step; ``backward`` clears it unless ``retain_graph`` is set.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> backward((x * x).sum())
    >>> x.grad
    array([2., 4.])
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import AxisError, ContractError, DimensionError, RankError

__all__ = [
    "Tensor",
    "Tape",
    "get_tape",
    "reset_tape",
    "no_grad",
    "is_grad_enabled",
    "matmul",
    "transpose_last_two",
    "permute",
    "reshape",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "reduce",
    "activation",
    "relu",
    "gelu_approx",
    "softmax_last",
    "sqrt",
    "l2_normalize_last",
    "take",
    "detach",
    "backward",
]

DTYPE = np.float64
NORM_EPS = 1e-12


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    index: int
    generation: int


@dataclass
class Tape:
    nodes: list = field(default_factory=list)
    generation: int = 0

    def append(self, op, inputs, backward_fn) -> Node:
        node = Node(op, tuple(inputs), backward_fn, len(self.nodes), self.generation)
        self.nodes.append(node)
        return node

    def clear(self):
        self.nodes = []
        self.generation += 1

    def __len__(self):
        return len(self.nodes)


class _State(threading.local):
    def __init__(self):
        self.tape = Tape()
        self.grad_enabled = True


_state = _State()


def get_tape() -> Tape:
    return _state.tape


def reset_tape() -> None:
    """Discard every recorded node; tensors built before the reset become constants."""
    _state.tape.clear()


def is_grad_enabled() -> bool:
    return _state.grad_enabled


@contextlib.contextmanager
def no_grad():
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """An n-d float64 array that can take part in gradient recording.

    Leaves created with ``requires_grad=True`` accumulate into ``grad``;
    intermediate results carry a ``node`` handle into the tape instead.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    def __len__(self):
        return len(self.data)

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

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce("mean", self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        return permute(self, axes)

    @property
    def mT(self):
        return transpose_last_two(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracks(t: Tensor) -> bool:
    return t.node is not None or t.requires_grad


def _make(data: np.ndarray, op: str, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node = None
    out.requires_grad = False
    if _state.grad_enabled and any(_tracks(t) for t in inputs):
        out.requires_grad = True
        out.node = _state.tape.append(op, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f"shapes {a} and {b} are not broadcastable") from None


# -- linear algebra and layout -------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product ``a[..., m, k] @ b[..., k, n]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data

    def _bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(ad @ bd, "matmul", (a, b), _bw)


def transpose_last_two(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim < 2:
        raise RankError(f"transpose_last_two needs rank >= 2, got shape {a.shape}")
    return _make(
        np.swapaxes(a.data, -1, -2),
        "transpose",
        (a,),
        lambda g: (np.swapaxes(g, -1, -2),),
    )


def permute(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(int(i) for i in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise AxisError(f"permutation {axes} invalid for rank {a.ndim}")
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), "permute", (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {src} to {tuple(shape)}") from None
    return _make(out, "reshape", (a,), lambda g: (g.reshape(src),))


def take(a, indices, axis: int) -> Tensor:
    """Gather along ``axis`` with an integer index array (any shape).

    The output replaces ``axis`` by the dimensions of ``indices``.
    """
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise AxisError(f"axis {axis} out of range for rank {a.ndim}")
    axis = axis % a.ndim
    idx = np.asarray(indices, dtype=np.intp)
    src = a.shape

    def _bw(g):
        full = np.zeros(src, dtype=DTYPE)
        # move the gathered dims to the front so np.add.at sees (idx..., rest)
        moved_full = np.moveaxis(full, axis, 0)
        lead = tuple(range(axis, axis + idx.ndim))
        moved_g = np.moveaxis(g, lead, tuple(range(idx.ndim)))
        np.add.at(moved_full, idx, moved_g)
        return (full,)

    return _make(np.take(a.data, idx, axis=axis), "take", (a,), _bw)


# -- elementwise -----------------------------------------------------------------


def elementwise(op: str, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    if op == "add":
        return _make(
            ad + bd, "add", (a, b),
            lambda g: (_unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)),
        )
    if op == "sub":
        return _make(
            ad - bd, "sub", (a, b),
            lambda g: (_unbroadcast(g, ad.shape), _unbroadcast(-g, bd.shape)),
        )
    if op == "mul":
        return _make(
            ad * bd, "mul", (a, b),
            lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        )
    if op == "div":
        out = ad / bd
        return _make(
            out, "div", (a, b),
            lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
        )
    raise ValueError(f"unknown elementwise op {op!r}")


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def div(a, b):
    return elementwise("div", a, b)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, "sqrt", (a,), lambda g: (g * 0.5 / out,))


# -- reductions ------------------------------------------------------------------


def reduce(op: str, a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is not None:
        if not -a.ndim <= axis < a.ndim:
            raise AxisError(f"axis {axis} out of range for rank {a.ndim}")
        axis = axis % a.ndim
    n = a.size if axis is None else a.shape[axis]
    if op == "sum":
        out = a.data.sum(axis=axis, keepdims=keepdims)
        scale = 1.0
    elif op == "mean":
        out = a.data.mean(axis=axis, keepdims=keepdims)
        scale = 1.0 / n
    else:
        raise ValueError(f"unknown reduction {op!r}")
    src = a.shape

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * scale, src).copy(),)

    return _make(np.asarray(out, dtype=DTYPE), op, (a,), _bw)


# -- nonlinearities ----------------------------------------------------------------

_GELU_C = np.sqrt(2.0 / np.pi)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, "relu", (a,), lambda g: (g * mask,))


def gelu_approx(a) -> Tensor:
    """Tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def _bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner),)

    return _make(out, "gelu", (a,), _bw)


def softmax_last(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim < 1:
        raise RankError("softmax_last needs rank >= 1")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, "softmax", (a,), _bw)


_ACTIVATIONS = {"relu": relu, "gelu_approx": gelu_approx, "softmax_last": softmax_last}


def activation(op: str, a) -> Tensor:
    try:
        fn = _ACTIVATIONS[op]
    except KeyError:
        raise ValueError(f"unknown activation {op!r}") from None
    return fn(a)


def l2_normalize_last(a, eps: float = NORM_EPS) -> Tensor:
    """Divide each last-axis vector by ``max(||v||_2, eps)``.

    Zero vectors come back as zeros (scaled by ``1/eps``), never NaN.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    a = as_tensor(a)
    x = a.data
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    clipped = norm <= eps
    denom = np.where(clipped, eps, norm)
    y = x / denom

    def _bw(g):
        radial = (g * y).sum(axis=-1, keepdims=True)
        return (np.where(clipped, g / eps, (g - y * radial) / denom),)

    return _make(y, "l2_normalize", (a,), _bw)


def detach(a) -> Tensor:
    """Same values, no tape node: gradients stop here."""
    a = as_tensor(a)
    return Tensor(a.data.copy())


# -- backward pass --------------------------------------------------------------------


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Repeated calls add onto existing ``.grad`` arrays; callers zero them.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = getattr(loss, "shape", None)
        raise ContractError(f"backward needs a scalar loss, got shape {shape}")
    tape = _state.tape
    root = loss.node
    if root is None:
        # constant loss: nothing is reachable
        if not retain_graph:
            tape.clear()
        return
    if root.generation != tape.generation:
        raise ContractError("loss was recorded on a tape that has since been cleared")

    grads = {root.index: np.ones_like(loss.data)}
    nodes = tape.nodes
    for idx in range(root.index, -1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        node = nodes[idx]
        in_grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None:
                continue
            if t.node is not None and t.node.generation == tape.generation:
                prev = grads.get(t.node.index)
                grads[t.node.index] = gi if prev is None else prev + gi
            elif t.requires_grad and t.node is None:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
    if not retain_graph:
        tape.clear()
