"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Var`` records its value and, for derived nodes, the parent variables
together with vector-Jacobian callbacks.  Calling :func:`backward` on a
scalar-valued node accumulates ``grad`` on every reachable variable.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidInput


class Var:
    __slots__ = ("value", "grad", "_parents")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        # parents: tuple of (Var, vjp) where vjp maps the output cotangent
        # to this parent's cotangent contribution.
        self._parents = parents

    @property
    def shape(self):
        return self.value.shape

    # -- graph construction helpers -------------------------------------

    def __add__(self, other: "Var") -> "Var":
        return Var(self.value + other.value, ((self, lambda g: g), (other, lambda g: g)))

    def __sub__(self, other: "Var") -> "Var":
        return Var(self.value - other.value, ((self, lambda g: g), (other, lambda g: -g)))

    def __mul__(self, other: "Var") -> "Var":
        return Var(
            self.value * other.value,
            ((self, lambda g: g * other.value), (other, lambda g: g * self.value)),
        )

    def scale(self, c: float) -> "Var":
        return Var(self.value * c, ((self, lambda g: g * c),))


def constant(value) -> Var:
    return Var(value)


def matvec(m: Var, v: Var) -> Var:
    """m @ v for a 2-d matrix and 1-d vector."""
    return Var(
        m.value @ v.value,
        ((m, lambda g: np.outer(g, v.value)), (v, lambda g: m.value.T @ g)),
    )


def matmul(a: Var, b: Var) -> Var:
    return Var(
        a.value @ b.value,
        ((a, lambda g: g @ b.value.T), (b, lambda g: a.value.T @ g)),
    )


def tanh(x: Var) -> Var:
    out = np.tanh(x.value)
    return Var(out, ((x, lambda g, out=out: g * (1.0 - out * out)),))


def mean_rows(x: Var) -> Var:
    """Mean over the leading axis of a 2-d array."""
    n = x.value.shape[0]
    return Var(x.value.mean(axis=0), ((x, lambda g: np.tile(g / n, (n, 1))),))


def concat(parts: list[Var]) -> Var:
    values = [p.value for p in parts]
    sizes = [v.shape[0] for v in values]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        return lambda g: g[offsets[i] : offsets[i + 1]]

    return Var(np.concatenate(values), tuple((p, make_vjp(i)) for i, p in enumerate(parts)))


def pick(x: Var, index: int) -> Var:
    """Select one scalar component of a 1-d array."""
    if not 0 <= index < x.value.shape[0]:
        raise InvalidInput(f"index {index} out of range for vector of length {x.value.shape[0]}")

    def vjp(g):
        out = np.zeros_like(x.value)
        out[index] = g
        return out

    return Var(x.value[index], ((x, vjp),))


def sum_all(x: Var) -> Var:
    return Var(x.value.sum(), ((x, lambda g: np.full_like(x.value, g)),))


def backward(root: Var) -> None:
    """Accumulate gradients of a scalar ``root`` into every reachable Var."""
    if root.value.size != 1:
        raise InvalidInput("backward target must be a scalar")
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    for node in order:
        node.grad = np.zeros_like(node.value)
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        g = node.grad
        for parent, vjp in node._parents:
            parent.grad = parent.grad + vjp(g)


def gradient_of(root: Var, leaves: list[Var]) -> list[np.ndarray]:
    backward(root)
    return [leaf.grad.copy() for leaf in leaves]
