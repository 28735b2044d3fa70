from __future__ import annotations

import numpy as np

from .tensor import Node, backward


class NondeterministicLossError(RuntimeError):
    pass


def grad_check(loss_fn, params: dict[str, Node], eps: float = 1e-4) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn()`` must rebuild the graph from the current parameter values
    and return a scalar node. The relative error of one entry is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    first = float(loss_fn().value)
    if float(loss_fn().value) != first:
        raise NondeterministicLossError(
            "grad_check: loss_fn is not deterministic; disable dropout or pin its seed"
        )
    for p in params.values():
        p.zero_grad()
    backward(loss_fn())
    worst = 0.0
    for p in params.values():
        analytic = p.grad
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().value)
            flat[i] = orig - eps
            down = float(loss_fn().value)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
