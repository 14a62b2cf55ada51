"""Small reverse-mode autodiff over float64 numpy arrays.

Every op returns a :class:`Node` holding its value and a list of
``(parent, vjp)`` pairs, where ``vjp`` maps the upstream gradient to the
parent's gradient contribution. ``backward`` walks the graph in reverse
construction order, so gradient accumulation order is fixed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_counter = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""

    def __init__(self, op: str, a: tuple, b: tuple):
        super().__init__(f"{op}: incompatible shapes {a} and {b}")
        self.op = op
        self.shapes = (a, b)


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


class Node:
    __slots__ = ("value", "grad", "parents", "order", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, value, parents: Sequence[tuple["Node", Callable]] = ()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.order = next(_counter)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Node(shape={self.shape})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Parameter(Node):
    __slots__ = ("name", "trainable")

    def __init__(self, value, name: str, trainable: bool = True):
        super().__init__(np.array(value, dtype=np.float64, copy=True))
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        flag = "" if self.trainable else ", frozen"
        return f"Parameter({self.name!r}, shape={self.shape}{flag})"


def const(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out dimensions introduced or stretched by broadcasting
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _bshape(op: str, a: Node, b: Node) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Node:
    a, b = const(a), const(b)
    _bshape("add", a, b)
    return Node(a.value + b.value, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ])


def sub(a, b) -> Node:
    a, b = const(a), const(b)
    _bshape("sub", a, b)
    return Node(a.value - b.value, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: -_unbroadcast(g, b.shape)),
    ])


def mul(a, b) -> Node:
    a, b = const(a), const(b)
    _bshape("mul", a, b)
    return Node(a.value * b.value, [
        (a, lambda g: _unbroadcast(g * b.value, a.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.shape)),
    ])


def div(a, b) -> Node:
    a, b = const(a), const(b)
    _bshape("div", a, b)
    out = a.value / b.value
    return Node(out, [
        (a, lambda g: _unbroadcast(g / b.value, a.shape)),
        (b, lambda g: _unbroadcast(-g * out / b.value, b.shape)),
    ])


def neg(a) -> Node:
    return Node(-a.value, [(a, lambda g: -g)])


# -- elementwise unary -------------------------------------------------------

def relu(a: Node) -> Node:
    mask = a.value > 0
    return Node(np.where(mask, a.value, 0.0), [(a, lambda g: g * mask)])


def sigmoid(a: Node) -> Node:
    x = a.value
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Node(out, [(a, lambda g: g * out * (1.0 - out))])


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return Node(out, [(a, lambda g: g * out)])


def log(a: Node) -> Node:
    return Node(np.log(a.value), [(a, lambda g: g / a.value)])


def square(a: Node) -> Node:
    return Node(a.value ** 2, [(a, lambda g: 2.0 * g * a.value)])


def clip(a: Node, lo: float, hi: float) -> Node:
    inside = (a.value >= lo) & (a.value <= hi)
    return Node(np.clip(a.value, lo, hi), [(a, lambda g: g * inside)])


# -- reductions and shape ops ------------------------------------------------

def _expand(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a: Node, axis=None, keepdims: bool = False) -> Node:
    return Node(a.value.sum(axis=axis, keepdims=keepdims),
                [(a, lambda g: _expand(g, a.shape, axis, keepdims))])


def mean(a: Node, axis=None, keepdims: bool = False) -> Node:
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return Node(a.value.mean(axis=axis, keepdims=keepdims),
                [(a, lambda g: _expand(g, a.shape, axis, keepdims) / n)])


def matmul(a, b) -> Node:
    a, b = const(a), const(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = a.value @ b.value
    if b.ndim == 1:
        return Node(out, [
            (a, lambda g: np.multiply.outer(g, b.value)),
            (b, lambda g: a.value.T @ g),
        ])
    if a.ndim == 1:
        return Node(out, [
            (a, lambda g: b.value @ g),
            (b, lambda g: np.outer(a.value, g)),
        ])
    return Node(out, [
        (a, lambda g: g @ b.value.T),
        (b, lambda g: a.value.T @ g),
    ])


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    nodes = [const(n) for n in nodes]
    ref = nodes[0].shape
    ax = axis % len(ref)
    for n in nodes[1:]:
        if len(n.shape) != len(ref) or any(
                s != r for i, (s, r) in enumerate(zip(n.shape, ref)) if i != ax):
            raise ShapeError("concat", ref, n.shape)
    bounds = np.cumsum([0] + [n.shape[ax] for n in nodes])
    parents = []
    for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
        sl = [slice(None)] * len(ref)
        sl[ax] = slice(lo, hi)
        parents.append((n, lambda g, sl=tuple(sl): g[sl]))
    return Node(np.concatenate([n.value for n in nodes], axis=ax), parents)


def getitem(a: Node, idx) -> Node:
    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return out
    return Node(a.value[idx], [(a, vjp)])


def reshape(a: Node, shape) -> Node:
    return Node(a.value.reshape(shape), [(a, lambda g: g.reshape(a.shape))])


# -- stabilized log-domain ops -----------------------------------------------

def logsumexp(a: Node, axis: int = -1, keepdims: bool = False) -> Node:
    m = a.value.max(axis=axis, keepdims=True)
    shifted = np.exp(a.value - m)
    s = shifted.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    soft = shifted / s
    res = out if keepdims else np.squeeze(out, axis=axis)
    return Node(res, [(a, lambda g: _expand(g, a.shape, axis, keepdims) * soft)])


def log_softmax(a: Node, axis: int = -1) -> Node:
    m = a.value.max(axis=axis, keepdims=True)
    z = a.value - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)
    return Node(out, [(a, lambda g: g - soft * g.sum(axis=axis, keepdims=True))])


# -- graph traversal ---------------------------------------------------------

def _topo(root: Node) -> list[Node]:
    seen: set[int] = set()
    nodes: list[Node] = []
    stack = [root]
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        nodes.append(n)
        stack.extend(p for p, _ in n.parents)
    # construction order is a valid topological order
    nodes.sort(key=lambda n: n.order, reverse=True)
    return nodes


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into ``.grad`` of every reachable node.

    Gradients are added to whatever ``.grad`` already holds on leaf
    parameters, so call :func:`zero_grad` between steps.
    """
    if root.value.size != 1:
        raise ValueError(f"backward() needs a scalar root, got shape {root.shape}")
    nodes = _topo(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for n in nodes:
        g = grads.pop(id(n), None)
        if g is None:
            continue
        if isinstance(n, Parameter) or not n.parents:
            n.grad = g if n.grad is None else n.grad + g
        for p, vjp in n.parents:
            contrib = vjp(g)
            k = id(p)
            grads[k] = contrib if k not in grads else grads[k] + contrib


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float = 1e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Apply one bias-corrected Adam update to the trainable ``params``.

    Frozen parameters are skipped. If any trainable gradient is non-finite
    nothing is updated and :class:`NonFiniteGradient` names the parameter.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    live = [p for p in params if p.trainable]
    for p in live:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(p.name)
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p in live:
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state
