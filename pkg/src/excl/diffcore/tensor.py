"""Differentiable node type and the reverse-mode driver."""

from __future__ import annotations

import numpy as np

ROLES = ("parameter", "intermediate", "input")


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def check_finite(op: str, value: np.ndarray) -> np.ndarray:
    # a single reduction is cheaper than isfinite + all; inf/nan propagate through the sum
    with np.errstate(invalid="ignore", over="ignore"):
        total = value.sum()
    if not np.isfinite(total) and not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op}: non-finite value in output of shape {value.shape}")
    return value


class Node:
    """A value in the computation graph plus its accumulated gradient.

    ``backward_fn`` receives the upstream gradient and returns one gradient
    (or ``None``) per parent, in order.
    """

    __slots__ = ("value", "_grad", "parents", "backward_fn", "role", "name")

    def __init__(self, value, parents=(), backward_fn=None, role="intermediate", name=None):
        if role not in ROLES:
            raise ValueError(f"unknown node role {role!r}")
        self.value = np.asarray(value, dtype=np.float64) if not isinstance(value, np.ndarray) else value
        self._grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.role = role
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g):
        self._grad = None if g is None else np.asarray(g, dtype=self.value.dtype)

    def zero_grad(self):
        self._grad = None

    def accumulate(self, g):
        if g is None:
            return
        if g.shape != self.value.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match value shape {self.value.shape}"
                + (f" for {self.name}" if self.name else "")
            )
        if self._grad is None:
            self._grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:
            self._grad += g

    @property
    def requires_grad(self) -> bool:
        return self.role == "parameter" or self.backward_fn is not None

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Node({self.role}{label}, shape={self.value.shape})"


def parameter(value, name=None) -> Node:
    return Node(np.array(value, dtype=np.float64), role="parameter", name=name)


def constant(value, name=None) -> Node:
    return Node(np.asarray(value, dtype=np.float64), role="input", name=name)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _topological_order(root: Node) -> list[Node]:
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Populate ``.grad`` on every node reachable from ``loss``.

    Parameter gradients accumulate across calls; zeroing them is the
    caller's job. Intermediate gradients are reset at the start of each pass.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    order = _topological_order(loss)
    for node in order:
        if node.role != "parameter":
            node.zero_grad()
    loss.accumulate(np.ones_like(loss.value))
    for node in reversed(order):
        if node.backward_fn is None or node._grad is None:
            continue
        grads = node.backward_fn(node._grad)
        for parent, g in zip(node.parents, grads):
            if g is not None and parent.requires_grad:
                parent.accumulate(g)
