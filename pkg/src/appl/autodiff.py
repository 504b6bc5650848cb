"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Every differentiable value is a :class:`Tensor`.  Tensors that carry a
:class:`Tape` record the operation that produced them; :func:`backward`
replays the tape in reverse and fills ``grad`` on every leaf created with
``requires_grad=True``.  Tensors without a tape are constants and cost no
bookkeeping, which is what the finite-difference checker relies on.

The op set is deliberately small: it covers linear layers, ReLU, prototype
construction, squared Euclidean distances, the negated-distance softmax and
the cross-entropy style reductions built on top of them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .exceptions import DimensionError, NumericError

__all__ = [
    "Tape",
    "Tensor",
    "add",
    "backward",
    "concat",
    "constant",
    "grad_check",
    "log",
    "matmul",
    "mean",
    "mul",
    "pairwise_sq_dist",
    "reciprocal",
    "relu",
    "reshape",
    "scale",
    "set_debug",
    "softmax_neg",
    "sq_euclidean",
    "sum",
    "take_rows",
]

_DEBUG = False


def set_debug(flag: bool) -> None:
    """Toggle NaN assertions on every forward result."""
    global _DEBUG
    _DEBUG = bool(flag)


@dataclass
class _Node:
    op: str
    inputs: tuple
    output: "Tensor"
    backward: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of operations, consumed by a single backward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaves: list[Tensor] = []
        self._next_id = 0
        self._consumed = False

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id - 1

    def leaf(self, data, requires_grad: bool = True, name: str = "") -> "Tensor":
        return Tensor(data, requires_grad=requires_grad, tape=self, name=name)


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "tape", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, tape: Tape | None = None,
                 name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape = tape
        self.name = name
        if requires_grad and tape is None:
            raise ValueError("a tensor that requires grad must live on a tape")
        if tape is not None:
            self.node_id = tape._new_id()
            if requires_grad:
                tape.leaves.append(self)
        else:
            self.node_id = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, scale(other, -1.0))
        return add(self, -float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def constant(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


def _tape_of(inputs: Sequence[Tensor]) -> Tape | None:
    tape = None
    for t in inputs:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise ValueError("operands belong to different tapes")
    return tape


def _emit(op: str, inputs: Sequence[Tensor], data: np.ndarray, grad_fn) -> Tensor:
    if _DEBUG and np.isnan(data).any():
        if not any(np.isnan(t.data).any() for t in inputs):
            raise NumericError(f"{op} produced NaN from NaN-free inputs")
    tape = _tape_of(inputs)
    requires = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = requires
    out.grad = None
    out.name = op
    if tape is not None:
        out.tape = tape
        out.node_id = tape._new_id()
    else:
        out.tape = None
        out.node_id = None
    if requires:
        tape.nodes.append(_Node(op, tuple(inputs), out, grad_fn))
    return out


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        return g @ bd.T, ad.T @ g

    return _emit("matmul", (a, b), ad @ bd, grad_fn)


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias row vector or a python number."""
    a = constant(a)
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        shift = float(b)
        return _emit("add_scalar", (a,), a.data + shift, lambda g: (g,))
    b = constant(b)
    if a.shape == b.shape:
        return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return _emit("add_bias", (a, b), a.data + b.data, lambda g: (g, g.sum(axis=0)))
    raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}")


def scale(a: Tensor, c: float) -> Tensor:
    a = constant(a)
    c = float(c)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def relu(a: Tensor) -> Tensor:
    a = constant(a)
    gate = (a.data > 0).astype(np.float64)
    return _emit("relu", (a,), a.data * gate, lambda g: (g * gate,))


def concat(tensors: Sequence[Tensor]) -> Tensor:
    if len(tensors) == 0:
        raise ValueError("concat needs at least one tensor")
    tensors = [constant(t) for t in tensors]
    for t in tensors:
        if t.ndim != 1:
            raise DimensionError(f"concat expects rank-1 tensors, got shape {t.shape}")
    offsets = np.cumsum([0] + [t.shape[0] for t in tensors])

    def grad_fn(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(tensors)))

    return _emit("concat", tensors, np.concatenate([t.data for t in tensors]), grad_fn)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    a = constant(a)
    old = a.shape
    return _emit("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(old),))


def take_rows(a: Tensor, index) -> Tensor:
    """Gather rows ``a[index]``; repeated indices accumulate in backward."""
    a = constant(a)
    index = np.asarray(index, dtype=np.intp)
    n_rows = a.shape[0]

    def grad_fn(g):
        out = np.zeros((n_rows,) + g.shape[1:])
        np.add.at(out, index, g)
        return (out,)

    return _emit("take_rows", (a,), a.data[index], grad_fn)


def sq_euclidean(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"sq_euclidean: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data

    def grad_fn(g):
        return 2.0 * g * diff, -2.0 * g * diff

    return _emit("sq_euclidean", (a, b), np.asarray(diff @ diff), grad_fn)


def pairwise_sq_dist(a: Tensor, b: Tensor) -> Tensor:
    """Squared Euclidean distance between every row of ``a`` and every row of ``b``."""
    a, b = constant(a), constant(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"pairwise_sq_dist: shapes {a.shape} and {b.shape} differ")
    diff = a.data[:, None, :] - b.data[None, :, :]
    out = np.einsum("mnd,mnd->mn", diff, diff)

    def grad_fn(g):
        weighted = 2.0 * g[:, :, None] * diff
        return weighted.sum(axis=1), -weighted.sum(axis=0)

    return _emit("pairwise_sq_dist", (a, b), out, grad_fn)


def softmax_neg(v: Tensor) -> Tensor:
    """Softmax of the negated entries, row-wise for matrices."""
    v = constant(v)
    if v.ndim not in (1, 2):
        raise DimensionError(f"softmax_neg expects rank 1 or 2, got {v.shape}")
    z = -v.data
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (-p * (g - inner),)

    return _emit("softmax_neg", (v,), p, grad_fn)


def log(a: Tensor, floor: float = 1e-30) -> Tensor:
    """Natural log of ``max(a, floor)``; clamped entries get zero gradient."""
    a = constant(a)
    live = a.data > floor
    safe = np.where(live, a.data, floor)

    def grad_fn(g):
        return (np.where(live, g / safe, 0.0),)

    return _emit("log", (a,), np.log(safe), grad_fn)


def reciprocal(a: Tensor) -> Tensor:
    a = constant(a)
    out = 1.0 / a.data
    return _emit("reciprocal", (a,), out, lambda g: (-g * out * out,))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = constant(a)
    shape = a.shape
    return _emit("sum", (a,), np.asarray(a.data.sum()), lambda g: (np.full(shape, float(g)),))


def mean(a: Tensor) -> Tensor:
    a = constant(a)
    shape, n = a.shape, a.data.size
    return _emit("mean", (a,), np.asarray(a.data.mean()),
                 lambda g: (np.full(shape, float(g) / n),))


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------

def backward(tape: Tape, root: Tensor) -> None:
    """Fill ``grad`` of every ``requires_grad`` leaf with d(root)/d(leaf).

    Gradients add onto whatever a leaf already holds, so call sites reset
    ``grad`` (or build a fresh tape) between steps.
    """
    if root.data.size != 1 or root.ndim != 0:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if root.tape is not tape:
        raise ValueError("root tensor is not on this tape")
    if tape._consumed:
        raise RuntimeError("tape has already been consumed by a backward pass")
    tape._consumed = True

    grads: dict[int, np.ndarray] = {root.node_id: np.ones(())}
    for node in reversed(tape.nodes):
        g = grads.pop(node.output.node_id, None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if not t.requires_grad or gi is None:
                continue
            if t.node_id in grads:
                grads[t.node_id] = grads[t.node_id] + gi
            else:
                grads[t.node_id] = np.array(gi, dtype=np.float64)

    for leaf in tape.leaves:
        g = grads.get(leaf.node_id)
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = g if leaf.grad is None else leaf.grad + g


def _loss_value(loss_fn, arrays) -> float:
    value = loss_fn([Tensor(a) for a in arrays])
    value = float(value.data) if isinstance(value, Tensor) else float(value)
    if not np.isfinite(value):
        raise NumericError(f"loss is not finite: {value}")
    return value


def grad_check(loss_fn: Callable[[list[Tensor]], Tensor], params: Sequence[np.ndarray],
               step: float = 1e-5) -> float:
    """Worst relative error between autodiff and central finite differences.

    ``loss_fn`` receives one tensor per entry of ``params`` and must return a
    scalar tensor.  The relative error of each coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    arrays = [np.array(p, dtype=np.float64) for p in params]

    tape = Tape()
    leaves = [tape.leaf(a.copy()) for a in arrays]
    root = loss_fn(leaves)
    if not np.isfinite(root.data).all():
        raise NumericError(f"loss is not finite: {root.data}")
    backward(tape, root)

    worst = 0.0
    for k, base in enumerate(arrays):
        analytic = leaves[k].grad
        for j in range(base.size):
            shifted = list(arrays)
            plus = base.copy()
            plus.flat[j] += step
            shifted[k] = plus
            f_plus = _loss_value(loss_fn, shifted)
            minus = base.copy()
            minus.flat[j] -= step
            shifted[k] = minus
            f_minus = _loss_value(loss_fn, shifted)
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic.flat[j])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
