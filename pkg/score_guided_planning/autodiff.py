"""
Reverse-mode automatic differentiation over float64 numpy arrays.

A ``Tape`` records every operation applied to its ``Var`` values as a node
holding the op kind, the parent node indices and one vector-Jacobian closure
per parent. Nodes are appended in evaluation order, so walking the node list
backwards from the output is a reverse topological order and each node is
visited once.

The module-level ops (``tanh``, ``sum``, ``concat``, ...) accept either plain
arrays or ``Var``s. With plain arrays they return numpy results and record
nothing, which lets rewards, dynamics models and networks share one code path
for fast batched evaluation and for differentiation.
"""

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

Vjp = Callable[[np.ndarray], np.ndarray]


@dataclass
class _Node:
    kind: str
    parents: tuple[int, ...]
    vjps: tuple[Vjp, ...]


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "index")
    # numpy defers to Var for `ndarray <op> Var`
    __array_priority__ = 1000

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, index={self.index})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return getitem(self, key)


class Gradients:
    """Result of ``Tape.backward``: adjoints indexed by node."""

    def __init__(self, tape: "Tape", adjoints: list):
        self._tape = tape
        self._adjoints = adjoints

    def wrt(self, var: Var) -> np.ndarray:
        """Gradient of the output with respect to ``var`` (zeros if unreachable)."""
        if var.tape is not self._tape:
            raise ContractError("Variable belongs to a different tape")
        g = self._adjoints[var.index] if var.index < len(self._adjoints) else None
        if g is None:
            return np.zeros_like(var.value)
        return g

    def params(self, model) -> list[np.ndarray]:
        """Gradients for every parameter array of ``model``, in ``model.parameters()`` order."""
        if id(model) not in self._tape._bound:
            raise ContractError(f"{type(model).__name__} was never bound to this tape")
        leaves = self._tape.bind(model)
        return [self.wrt(v) for v in leaves]


class Tape:
    """Records operations on ``Var``s for one backward pass."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._values: list[np.ndarray] = []
        self._bound: dict[int, tuple[object, list[Var]]] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, value, kind: str, parents: Sequence[tuple["Var", Vjp]] = ()) -> Var:
        value = np.asarray(value, dtype=np.float64)
        for p, _ in parents:
            if p.tape is not self:
                raise ContractError("Cannot combine variables from different tapes")
        node = _Node(kind, tuple(p.index for p, _ in parents), tuple(f for _, f in parents))
        self._nodes.append(node)
        self._values.append(value)
        return Var(value, self, len(self._nodes) - 1)

    def leaf(self, value) -> Var:
        """A differentiable input."""
        return self._record(np.array(value, dtype=np.float64), "leaf")

    def constant(self, value) -> Var:
        """A value that takes part in the graph but is never differentiated."""
        return self._record(np.array(value, dtype=np.float64), "const")

    def bind(self, model) -> list[Var]:
        """Leaves for ``model.parameters()``, created once per model per tape."""
        key = id(model)
        if key not in self._bound:
            self._bound[key] = (model, [self.leaf(p) for p in model.parameters()])
        return self._bound[key][1]

    def backward(self, output: Var) -> Gradients:
        if output.tape is not self:
            raise ContractError("Output belongs to a different tape")
        if output.value.size != 1:
            raise ContractError(f"backward() needs a scalar output, got shape {output.shape}")
        adjoints: list = [None] * len(self._nodes)
        adjoints[output.index] = np.ones_like(output.value)
        for i in range(output.index, -1, -1):
            g = adjoints[i]
            if g is None:
                continue
            node = self._nodes[i]
            for parent, vjp in zip(node.parents, node.vjps):
                contrib = vjp(g)
                if adjoints[parent] is None:
                    adjoints[parent] = np.array(contrib, dtype=np.float64)
                else:
                    adjoints[parent] = adjoints[parent] + contrib
        return Gradients(self, adjoints)


def value_of(x) -> np.ndarray:
    """Plain array behind ``x``."""
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _tape_of(*xs) -> "Tape | None":
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _lift(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        return x
    return tape.constant(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (undo numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _binary(kind: str, a, b, fn, da, db):
    tape = _tape_of(a, b)
    if tape is None:
        return fn(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    out = fn(av, bv)
    return tape._record(
        out,
        kind,
        [
            (a, lambda g: _unbroadcast(da(g, av, bv, out), av.shape)),
            (b, lambda g: _unbroadcast(db(g, av, bv, out), bv.shape)),
        ],
    )


def _unary(kind: str, x, fn, dfn):
    if not isinstance(x, Var):
        return fn(np.asarray(x, dtype=np.float64))
    xv = x.value
    out = fn(xv)
    return x.tape._record(out, kind, [(x, lambda g: dfn(g, xv, out))])


def add(a, b):
    return _binary("add", a, b, np.add, lambda g, a, b, o: g, lambda g, a, b, o: g)


def sub(a, b):
    return _binary("sub", a, b, np.subtract, lambda g, a, b, o: g, lambda g, a, b, o: -g)


def mul(a, b):
    return _binary("mul", a, b, np.multiply, lambda g, a, b, o: g * b, lambda g, a, b, o: g * a)


def div(a, b):
    return _binary(
        "div",
        a,
        b,
        np.divide,
        lambda g, a, b, o: g / b,
        lambda g, a, b, o: -g * a / (b * b),
    )


def neg(x):
    return _unary("neg", x, np.negative, lambda g, x, o: -g)


def power(x, exponent: float):
    """``x ** exponent`` for a constant scalar exponent."""
    if isinstance(exponent, Var):
        raise ContractError("Only constant exponents are supported")
    p = float(exponent)
    return _unary("pow", x, lambda v: np.power(v, p), lambda g, v, o: g * p * np.power(v, p - 1.0))


def square(x):
    return _unary("square", x, np.square, lambda g, x, o: 2.0 * g * x)


def sqrt(x):
    return _unary("sqrt", x, np.sqrt, lambda g, x, o: 0.5 * g / o)


def exp(x):
    return _unary("exp", x, np.exp, lambda g, x, o: g * o)


def log(x):
    return _unary("log", x, np.log, lambda g, x, o: g / x)


def sin(x):
    return _unary("sin", x, np.sin, lambda g, x, o: g * np.cos(x))


def cos(x):
    return _unary("cos", x, np.cos, lambda g, x, o: -g * np.sin(x))


def tanh(x):
    return _unary("tanh", x, np.tanh, lambda g, x, o: g * (1.0 - o * o))


def relu(x):
    return _unary("relu", x, lambda v: np.maximum(v, 0.0), lambda g, x, o: g * (x > 0.0))


def _softplus(v):
    return np.logaddexp(0.0, v)


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def softplus(x):
    return _unary("softplus", x, _softplus, lambda g, x, o: g * _sigmoid(x))


def _as_2d(a: np.ndarray, left: bool) -> np.ndarray:
    if a.ndim == 1:
        return a[None, :] if left else a[:, None]
    if a.ndim == 2:
        return a
    raise ShapeError(f"matmul supports 1-D and 2-D operands, got {a.ndim}-D")


def matmul(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return np.matmul(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    a2, b2 = _as_2d(av, left=True), _as_2d(bv, left=False)
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    out = np.matmul(av, bv)
    rows, cols = a2.shape[0], b2.shape[1]

    def da(g):
        return (g.reshape(rows, cols) @ b2.T).reshape(av.shape)

    def db(g):
        return (a2.T @ g.reshape(rows, cols)).reshape(bv.shape)

    return tape._record(out, "matmul", [(a, da), (b, db)])


def sum(x, axis=None, keepdims: bool = False):  # noqa: A001
    if not isinstance(x, Var):
        return np.sum(np.asarray(x, dtype=np.float64), axis=axis, keepdims=keepdims)
    xv = x.value
    out = np.sum(xv, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, xv.shape).copy()

    return x.tape._record(out, "sum", [(x, vjp)])


def mean(x, axis=None, keepdims: bool = False):
    xv = value_of(x)
    count = xv.size if axis is None else np.prod([xv.shape[a] for a in np.atleast_1d(axis)])
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / float(count))


def concat(xs: Sequence, axis: int = -1):
    tape = _tape_of(*xs)
    if tape is None:
        return np.concatenate([np.asarray(x, dtype=np.float64) for x in xs], axis=axis)
    vs = [_lift(tape, x) for x in xs]
    values = [v.value for v in vs]
    out = np.concatenate(values, axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [v.shape[ax] for v in values])
    parents = []
    for v, lo, hi in zip(vs, bounds[:-1], bounds[1:]):
        sl = [slice(None)] * out.ndim
        sl[ax] = slice(int(lo), int(hi))
        parents.append((v, lambda g, sl=tuple(sl): g[sl]))
    return tape._record(out, "concat", parents)


def stack(xs: Sequence, axis: int = 0):
    tape = _tape_of(*xs)
    if tape is None:
        return np.stack([np.asarray(x, dtype=np.float64) for x in xs], axis=axis)
    vs = [_lift(tape, x) for x in xs]
    out = np.stack([v.value for v in vs], axis=axis)
    parents = [(v, lambda g, i=i: np.take(g, i, axis=axis)) for i, v in enumerate(vs)]
    return tape._record(out, "stack", parents)


def getitem(x, key):
    if not isinstance(x, Var):
        return np.asarray(x, dtype=np.float64)[key]
    xv = x.value
    out = xv[key]

    def vjp(g):
        full = np.zeros_like(xv)
        np.add.at(full, key, g)
        return full

    return x.tape._record(np.array(out), "index", [(x, vjp)])


def reshape(x, shape):
    if not isinstance(x, Var):
        return np.reshape(np.asarray(x, dtype=np.float64), shape)
    xv = x.value
    return x.tape._record(xv.reshape(shape), "reshape", [(x, lambda g: g.reshape(xv.shape))])


def numerical_gradient(
    fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn(x))
        flat[i] = orig - h
        down = float(fn(x))
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-based relative error, symmetric and safe when both are tiny."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))
