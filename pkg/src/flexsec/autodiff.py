"""Minimal reverse-mode automatic differentiation over numpy arrays.

Operations on :class:`Tensor` objects are recorded on the active :class:`Tape`
(see ``with Tape() as tape:``). Outside a tape they are evaluated eagerly with
no bookkeeping, which is what inference uses.

    >>> x = Tensor(3.0, requires_grad=True)
    >>> with Tape() as tape:
    ...     y = x * x
    >>> tape.backward(y)
    >>> float(x.grad)
    6.0
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, expit

__all__ = [
    "Tape", "Tensor", "ShapeError", "BackwardError", "AdamW",
    "concat", "stack", "solve_spd", "spd_solve_array", "gelu", "sigmoid",
    "softmax", "log1p", "exp", "log", "tanh", "where_const",
]

_ACTIVE: list["Tape"] = []


class ShapeError(ValueError):
    """Raised when an operation receives operands of incompatible shapes."""


class BackwardError(RuntimeError):
    """Raised when backward is requested for something not on the tape."""


class Tape:
    """Append-only record of primitive operations.

    Insertion order is a valid topological order, so the backward pass is a
    single reverse sweep.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def record(self, node: "Tensor") -> None:
        node.node_id = len(self.nodes)
        node.tape = self
        self.nodes.append(node)

    def backward(self, loss: "Tensor", seed=1.0) -> None:
        if loss.tape is not self or loss.node_id is None:
            raise BackwardError("loss was not produced on this tape (run forward first)")
        for node in self.nodes:
            node.grad = None
            for parent in node.parents:
                if parent.tape is not self:
                    parent.grad = None
        loss.grad = np.broadcast_to(np.asarray(seed, dtype=float), loss.data.shape).copy()
        for node in reversed(self.nodes[: loss.node_id + 1]):
            if node.grad is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                g = _unbroadcast(g, parent.data.shape)
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=float)
                else:
                    parent.grad = parent.grad + g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    tracked = _ACTIVE and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=bool(tracked))
    if tracked:
        out.parents = parents
        out.backward_fn = backward_fn
        out.op = op
        _ACTIVE[-1].record(out)
    return out


def _checked(op, fn, *arrays):
    try:
        return fn(*arrays)
    except ValueError as exc:
        node = len(_ACTIVE[-1].nodes) if _ACTIVE else None
        shapes = ", ".join(str(a.shape) for a in arrays)
        raise ShapeError(f"{op} at node {node}: incompatible shapes {shapes}") from exc


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn",
                 "op", "node_id", "tape", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = ()
        self.backward_fn = None
        self.op = "leaf"
        self.node_id = None
        self.tape = None
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def numpy(self):
        return self.data

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other):
        other = _as_tensor(other)
        data = _checked("add", np.add, self.data, other.data)
        return _make(data, (self, other), lambda g: (g, g), "add")

    __radd__ = __add__

    def __neg__(self):
        return _make(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other):
        other = _as_tensor(other)
        data = _checked("sub", np.subtract, self.data, other.data)
        return _make(data, (self, other), lambda g: (g, -g), "sub")

    def __rsub__(self, other):
        return _as_tensor(other) - self

    def __mul__(self, other):
        other = _as_tensor(other)
        a, b = self.data, other.data
        data = _checked("mul", np.multiply, a, b)
        return _make(data, (self, other), lambda g: (g * b, g * a), "mul")

    __rmul__ = __mul__

    def reciprocal(self):
        inv = 1.0 / self.data
        return _make(inv, (self,), lambda g: (-g * inv * inv,), "reciprocal")

    def __truediv__(self, other):
        return self * _as_tensor(other).reciprocal()

    def __rtruediv__(self, other):
        return _as_tensor(other) * self.reciprocal()

    def __pow__(self, k):
        if isinstance(k, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self.data
        return _make(a ** k, (self,), lambda g: (g * k * a ** (k - 1),), "pow")

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __rmatmul__(self, other):
        return matmul(_as_tensor(other), self)

    def __getitem__(self, idx):
        data = self.data[idx]
        shape = self.data.shape

        def back(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return _make(data, (self,), back, "getitem")

    # -- reductions and shape ops -------------------------------------------
    def sum(self, axis=None, keepdims=False):
        shape = self.data.shape
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return _make(data, (self,), back, "sum")

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        old = self.data.shape
        data = _checked("reshape", lambda a: a.reshape(*shape), self.data)
        return _make(data, (self,), lambda g: (g.reshape(old),), "reshape")

    def swapaxes(self, a1, a2):
        data = self.data.swapaxes(a1, a2)
        return _make(data, (self,), lambda g: (g.swapaxes(a1, a2),), "swapaxes")

    def take(self, indices, axis):
        indices = np.asarray(indices)
        shape = self.data.shape
        data = np.take(self.data, indices, axis=axis)

        def back(g):
            out = np.zeros(shape)
            idx = [slice(None)] * len(shape)
            idx[axis] = indices
            np.add.at(out, tuple(idx), g)
            return (out,)

        return _make(data, (self,), back, "take")

    # -- elementwise nonlinearities as methods ------------------------------
    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def log1p(self):
        return log1p(self)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    x, y = a.data, b.data
    if x.ndim < 2 or y.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {x.shape} and {y.shape}")
    data = _checked("matmul", np.matmul, x, y)

    def back(g):
        return g @ np.swapaxes(y, -1, -2), np.swapaxes(x, -1, -2) @ g

    return _make(data, (a, b), back, "matmul")


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return _make(e, (x,), lambda g: (g * e,), "exp")


def log(x: Tensor) -> Tensor:
    a = x.data
    return _make(np.log(a), (x,), lambda g: (g / a,), "log")


def log1p(x: Tensor) -> Tensor:
    a = x.data
    return _make(np.log1p(a), (x,), lambda g: (g / (1.0 + a),), "log1p")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _make(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    # expit keeps relative precision deep in both tails, where 1 - s would cancel
    s = expit(x.data)
    ds = s * expit(-x.data)
    return _make(s, (x,), lambda g: (g * ds,), "sigmoid")


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x), with Phi the standard normal CDF."""
    a = x.data
    cdf = 0.5 * (1.0 + erf(a / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * a * a)
    return _make(a * cdf, (x,), lambda g: (g * (cdf + a * pdf),), "gelu")


def softmax(x: Tensor, axis=-1) -> Tensor:
    a = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(a)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), back, "softmax")


def concat(tensors, axis=-1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = _checked("concat", lambda *a: np.concatenate(a, axis=axis),
                    *[t.data for t in tensors])
    sizes = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(data, tuple(tensors), back, "concat")


def stack(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = _checked("stack", lambda *a: np.stack(a, axis=axis),
                    *[t.data for t in tensors])

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(data, tuple(tensors), back, "stack")


def where_const(mask, x: Tensor, fill=0.0) -> Tensor:
    """``x`` where ``mask`` holds, constant ``fill`` elsewhere."""
    mask = np.asarray(mask, dtype=bool)
    data = np.where(mask, x.data, fill)
    return _make(data, (x,), lambda g: (np.where(mask, g, 0.0),), "where")


def spd_solve_array(A, b):
    """Solve ``A x = b`` for (batched) Hermitian positive-definite ``A``.

    ``b`` may be a (batched) vector or matrix. Uses a Cholesky factorization
    and falls back to a pivoted LU solve when the factorization fails.
    """
    vec = b.ndim == A.ndim - 1
    rhs = b[..., None] if vec else b
    try:
        L = np.linalg.cholesky(A)
        y = np.linalg.solve(L, rhs)
        x = np.linalg.solve(np.conj(np.swapaxes(L, -1, -2)), y)
    except np.linalg.LinAlgError:
        x = np.linalg.solve(A, rhs)
    return x[..., 0] if vec else x


def solve_spd(A: Tensor, b: Tensor) -> Tensor:
    """Differentiable solve of a symmetric positive-definite real system."""
    A, b = _as_tensor(A), _as_tensor(b)
    if A.data.shape[-1] != A.data.shape[-2] or b.data.shape[A.ndim - 2] != A.data.shape[-1]:
        node = len(_ACTIVE[-1].nodes) if _ACTIVE else None
        raise ShapeError(f"solve at node {node}: A {A.shape} vs b {b.shape}")
    x = spd_solve_array(A.data, b.data)
    vec = b.ndim == A.ndim - 1

    def back(g):
        gb = spd_solve_array(A.data, g)
        if vec:
            gA = -gb[..., :, None] * x[..., None, :]
        else:
            gA = -gb @ np.swapaxes(x, -1, -2)
        return gA, gb

    return _make(x, (A, b), back, "solve_spd")


class AdamW:
    """AdamW with decoupled weight decay and bias-corrected moments.

    Mirrors the usual ``torch.optim.AdamW`` update: decay the parameter by
    ``lr * weight_decay`` first, then take the Adam step.
    """

    def __init__(self, params, lr=0.002, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads=None):
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                     for p in self.params]
        beta1, beta2 = self.betas
        self.step_count += 1
        bc1 = 1.0 - beta1 ** self.step_count
        bc2 = 1.0 - beta2 ** self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self):
        return {"step": self.step_count, "m": [a.copy() for a in self.m],
                "v": [a.copy() for a in self.v]}
