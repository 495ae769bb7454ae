"""Reverse-mode automatic differentiation over dense 2-D float64 tensors.

The op set is the closure of what the embedding model and its losses need:
matmul, add, sub, elementwise mul, scalar mul, transpose, row gather,
row concat, sum, mean, log, tanh, leaky relu, row softmax, square,
clamp-min, and rsqrt (for the cosine-normalized reconstruction loss).
There is no broadcasting except scalar multiplication: shapes must match
exactly, and mismatches raise ShapeError naming the op and both shapes.

Ops executed inside a ``with Tape():`` block are recorded; ``tape.backward``
walks the record once in reverse and accumulates exact vector-Jacobian
products into the ``grad`` of every tensor created with
``requires_grad=True``. Gradients accumulate across backward calls until
``reset_grad``. A tape is single-threaded; independent tapes may run in
parallel threads (the active tape is thread-local).

``grad_check`` compares tape gradients against central finite differences,
for single ops or whole training losses.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

_state = threading.local()


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.values = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def reset_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.values)

    def item(self) -> float:
        if self.values.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return smul(self, float(other))

    def __rmul__(self, other):
        return smul(self, float(other))


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


class Tape:
    """Execution record: (output, inputs, vjp) triples in forward order."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.tapes.pop()

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        self._records.append((out, inputs, vjp))

    def backward(self, out: Tensor) -> None:
        """Accumulate d(out)/d(leaf) into every requires_grad leaf."""
        if out.values.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 output, got {out.shape}")
        adjoint: dict[int, np.ndarray] = {id(out): np.ones((1, 1))}
        tensors: dict[int, Tensor] = {id(out): out}
        for node_out, inputs, vjp in reversed(self._records):
            g = adjoint.get(id(node_out))
            if g is None:
                continue
            for tensor, contrib in zip(inputs, vjp(g)):
                key = id(tensor)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + contrib
                else:
                    adjoint[key] = contrib
                    tensors[key] = tensor
        for key, tensor in tensors.items():
            if tensor.requires_grad:
                tensor.grad += adjoint[key]


def _tape() -> Tape:
    stack = getattr(_state, "tapes", None)
    if not stack:
        raise RuntimeError("no active Tape; wrap the computation in `with Tape():`")
    return stack[-1]


def _unary(kind: str, a: Tensor, out_values: np.ndarray, vjp_one: Callable) -> Tensor:
    out = Tensor(out_values)
    _tape()._record(out, (a,), lambda g: (vjp_one(g),))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = Tensor(a.values @ b.values)
    av, bv = a.values, b.values
    _tape()._record(out, (a, b), lambda g: (g @ bv.T, av.T @ g))
    return out


def _same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    out = Tensor(a.values + b.values)
    _tape()._record(out, (a, b), lambda g: (g, g))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    out = Tensor(a.values - b.values)
    _tape()._record(out, (a, b), lambda g: (g, -g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    out = Tensor(a.values * b.values)
    av, bv = a.values, b.values
    _tape()._record(out, (a, b), lambda g: (g * bv, g * av))
    return out


def smul(a: Tensor, c: float) -> Tensor:
    return _unary("smul", a, a.values * c, lambda g: g * c)


def transpose(a: Tensor) -> Tensor:
    return _unary("transpose", a, a.values.T.copy(), lambda g: g.T)


def gather_rows(a: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: index must be a vector, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape}")
    rows, shape = idx, a.shape

    def vjp(g):
        z = np.zeros(shape)
        np.add.at(z, rows, g)
        return z

    return _unary("gather_rows", a, a.values[idx], vjp)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_rows: empty input")
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise ShapeError(
                f"concat_rows: column mismatch {p.shape} vs (*, {cols})")
    out = Tensor(np.vstack([p.values for p in parts]))
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def vjp(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    _tape()._record(out, tuple(parts), vjp)
    return out


def total_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return _unary("sum", a, np.array([[a.values.sum()]]),
                  lambda g: np.full(shape, g[0, 0]))


def total_mean(a: Tensor) -> Tensor:
    shape = a.shape
    size = a.values.size
    return _unary("mean", a, np.array([[a.values.mean()]]),
                  lambda g: np.full(shape, g[0, 0] / size))


def log(a: Tensor) -> Tensor:
    if (a.values <= 0).any():
        raise ValueError("log: non-positive input")
    av = a.values
    return _unary("log", a, np.log(av), lambda g: g / av)


def tanh(a: Tensor) -> Tensor:
    out_values = np.tanh(a.values)
    return _unary("tanh", a, out_values, lambda g: g * (1.0 - out_values**2))


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    av = a.values
    slope = np.where(av > 0, 1.0, alpha)
    return _unary("leaky_relu", a, np.where(av > 0, av, alpha * av),
                  lambda g: g * slope)


def softmax_rows(a: Tensor) -> Tensor:
    shifted = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_values = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * out_values).sum(axis=1, keepdims=True)
        return (g - dot) * out_values

    return _unary("softmax_rows", a, out_values, vjp)


def square(a: Tensor) -> Tensor:
    av = a.values
    return _unary("square", a, av * av, lambda g: 2.0 * av * g)


def clamp_min(a: Tensor, bound: float) -> Tensor:
    av = a.values
    passthrough = (av > bound).astype(np.float64)
    return _unary("clamp_min", a, np.maximum(av, bound), lambda g: g * passthrough)


def rsqrt(a: Tensor) -> Tensor:
    if (a.values <= 0).any():
        raise ValueError("rsqrt: non-positive input")
    out_values = 1.0 / np.sqrt(a.values)
    return _unary("rsqrt", a, out_values, lambda g: -0.5 * out_values**3 * g)


def grad_check(f: Callable[[Sequence[Tensor]], Tensor], params: Sequence[Tensor],
               step: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(params)`` must rebuild the scalar output from scratch on each call
    (it runs under a fresh tape here). Relative error per coordinate is
    |a - b| / max(1e-8, |a| + |b|).
    """
    for p in params:
        p.reset_grad()
    with Tape() as tape:
        out = f(params)
        tape.backward(out)
    analytic = [p.grad.copy() for p in params]

    def value() -> float:
        with Tape():
            return f(params).item()

    worst = 0.0
    for p, grad in zip(params, analytic):
        for idx in np.ndindex(*p.values.shape):
            original = p.values[idx]
            p.values[idx] = original + step
            f_plus = value()
            p.values[idx] = original - step
            f_minus = value()
            p.values[idx] = original
            fd = (f_plus - f_minus) / (2.0 * step)
            a = grad[idx]
            worst = max(worst, abs(a - fd) / max(1e-8, abs(a) + abs(fd)))
    return worst
