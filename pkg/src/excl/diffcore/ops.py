"""Differentiable operations on :class:`Node`.

Every op validates shapes, checks its forward value for NaN/Inf and returns a
new node whose ``backward_fn`` maps the upstream gradient to one gradient per
parent.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .tensor import Node, ShapeError, as_node, check_finite


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _node(op, value, parents, backward_fn):
    return Node(check_finite(op, value), parents, backward_fn)


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("add", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node("add", a.value + b.value, (a, b), back)


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("sub", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node("sub", a.value - b.value, (a, b), back)


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("mul", a, b)

    def back(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _node("mul", a.value * b.value, (a, b), back)


def scale(a: Node, c: float) -> Node:
    return _node("scale", a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Node:
    """``a @ b`` where ``b`` is a matrix and ``a`` has any number of leading axes."""
    a, b = as_node(a), as_node(b)
    if b.value.ndim != 2 or a.value.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")

    def back(g):
        ga = g @ b.value.T
        a2 = a.value.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _node("matmul", a.value @ b.value, (a, b), back)


def affine(x, W, b) -> Node:
    """``x @ W + b`` with ``W`` of shape (in, out) and ``b`` of shape (out,)."""
    x, W, b = as_node(x), as_node(W), as_node(b)
    if W.value.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"affine: input shape {x.shape} does not match weight shape {W.shape}")
    if b.shape != (W.shape[1],):
        raise ShapeError(f"affine: bias shape {b.shape} does not match weight shape {W.shape}")

    def back(g):
        gx = g @ W.value.T
        gW = x.value.reshape(-1, W.shape[0]).T @ g.reshape(-1, W.shape[1])
        gb = g.reshape(-1, W.shape[1]).sum(axis=0)
        return gx, gW, gb

    return _node("affine", x.value @ W.value + b.value, (x, W, b), back)


def concat(nodes, axis: int = -1) -> Node:
    nodes = [as_node(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat: no inputs")
    ref = nodes[0].shape
    ax = axis % len(ref)
    for n in nodes[1:]:
        if n.value.ndim != len(ref) or any(
            n.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ShapeError(f"concat: shapes {ref} and {n.shape} differ outside axis {axis}")
    bounds = np.cumsum([0] + [n.shape[ax] for n in nodes])

    def back(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return _node("concat", np.concatenate([n.value for n in nodes], axis=ax), nodes, back)


def tanh(x: Node) -> Node:
    y = np.tanh(x.value)
    return _node("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Node) -> Node:
    y = _sigmoid(x.value)
    return _node("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def _sigmoid(z):
    return expit(z)


def log(x: Node) -> Node:
    if np.any(x.value <= 0):
        raise FloatingPointError("log: non-positive input")
    return _node("log", np.log(x.value), (x,), lambda g: (g / x.value,))


def total(x: Node) -> Node:
    return _node("sum", np.sum(x.value), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Node) -> Node:
    n = x.value.size
    return _node("mean", np.sum(x.value) / n, (x,), lambda g: (np.full(x.shape, g / n),))


def sum_axis(x: Node, axis: int) -> Node:
    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _node("sum_axis", x.value.sum(axis=axis), (x,), back)


def abs_diff(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.shape != b.shape:
        raise ShapeError(f"abs_diff: shapes {a.shape} and {b.shape} differ")
    d = a.value - b.value
    s = np.sign(d)
    return _node("abs_diff", np.abs(d), (a, b), lambda g: (g * s, -g * s))


def sq_diff(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.shape != b.shape:
        raise ShapeError(f"sq_diff: shapes {a.shape} and {b.shape} differ")
    d = a.value - b.value
    return _node("sq_diff", d * d, (a, b), lambda g: (2.0 * g * d, -2.0 * g * d))


def reshape(x: Node, shape) -> Node:
    return _node("reshape", x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def broadcast_to(x: Node, shape) -> Node:
    try:
        y = np.broadcast_to(x.value, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {tuple(shape)}") from None
    return _node("broadcast_to", y.copy(), (x,), lambda g: (_unbroadcast(g, x.shape),))


def expand_time(x: Node, steps: int) -> Node:
    """(B, D) -> (B, steps, D), repeating each row along a new time axis."""
    b, d = x.shape
    return broadcast_to(reshape(x, (b, 1, d)), (b, steps, d))


def embed(table: Node, ids) -> Node:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embed: index out of range for table of {table.shape[0]} rows")

    def back(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _node("embed", table.value[ids], (table,), back)


def pick(x: Node, index) -> Node:
    """Select ``x[b, index[b]]`` along axis 1 for every batch row ``b``."""
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(x.shape[0])
    if index.shape != (x.shape[0],):
        raise ShapeError(f"pick: index shape {index.shape} does not match batch {x.shape[0]}")

    def back(g):
        gx = np.zeros_like(x.value)
        gx[rows, index] = g
        return (gx,)

    return _node("pick", x.value[rows, index], (x,), back)


def reverse_padded(x: Node, lengths) -> Node:
    """Reverse each sequence of a (B, T, ...) batch within its valid prefix.

    Positions past a sequence's length are left in place, so applying the op
    twice is the identity.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    b, t = x.shape[:2]
    pos = np.arange(t)[None, :]
    src = np.where(pos < lengths[:, None], lengths[:, None] - 1 - pos, pos)
    rows = np.arange(b)[:, None]

    def back(g):
        gx = np.zeros_like(g)
        gx[rows, src] = g
        return (gx,)

    return _node("reverse_padded", x.value[rows, src], (x,), back)


def _masked_shift(x: np.ndarray, mask: np.ndarray, axis: int):
    if not np.all(mask.any(axis=axis)):
        raise ValueError("masked softmax: empty support")
    big_neg = np.where(mask, x, -np.inf)
    m = np.max(big_neg, axis=axis, keepdims=True)
    return np.where(mask, x - m, -np.inf)


def masked_softmax(logits, mask=None, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax restricted to ``mask``; masked entries are exactly 0."""
    x = np.asarray(logits, dtype=np.float64)
    mask = np.ones(x.shape, dtype=bool) if mask is None else np.broadcast_to(np.asarray(mask, bool), x.shape)
    z = _masked_shift(x, mask, axis)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def masked_log_softmax(logits, mask=None, axis: int = -1) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    mask = np.ones(x.shape, dtype=bool) if mask is None else np.broadcast_to(np.asarray(mask, bool), x.shape)
    z = _masked_shift(x, mask, axis)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    return np.where(mask, z - lse, 0.0)


def softmax(x: Node, mask=None, axis: int = -1) -> Node:
    y = masked_softmax(x.value, mask, axis)

    def back(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _node("softmax", y, (x,), back)


def log_softmax(x: Node, mask=None, axis: int = -1) -> Node:
    """Masked log-softmax; masked entries are reported as 0 and carry no gradient."""
    full = np.ones(x.shape, dtype=bool) if mask is None else np.broadcast_to(np.asarray(mask, bool), x.shape)
    y = masked_log_softmax(x.value, full, axis)
    p = np.where(full, np.exp(y), 0.0)

    def back(g):
        g = np.where(full, g, 0.0)
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return _node("log_softmax", y, (x,), back)


def dropout(x, p: float, train: bool, rng):
    """Inverted dropout. Accepts a :class:`Node` or a plain array and returns the same kind."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: rate must satisfy 0 <= p < 1, got {p}")
    if not train or p == 0.0:
        return x
    is_node = isinstance(x, Node)
    value = x.value if is_node else np.asarray(x)
    keep = rng.uniform(size=value.shape) >= p
    factor = keep / (1.0 - p)
    if not is_node:
        return value * factor
    return _node("dropout", value * factor, (x,), lambda g: (g * factor,))


def lstm(x: Node, W: Node, U: Node, b: Node) -> Node:
    """Unidirectional LSTM over a (B, T, D) batch from zero initial state.

    Gate blocks in ``W`` (D, 4H), ``U`` (H, 4H) and ``b`` (4H,) are ordered
    input, forget, cell, output. Returns hidden states of shape (B, T, H).
    """
    return index(lstm_stack([x], [W], [U], [b]), 0)


def lstm_stack(xs, Ws, Us, bs) -> Node:
    """K independent LSTMs over same-shaped inputs, run in one time loop.

    Returns a (K, B, T, H) node; ``index(out, k)`` selects one of them.
    """
    xs = [as_node(v) for v in xs]
    Ws, Us, bs = [as_node(v) for v in Ws], [as_node(v) for v in Us], [as_node(v) for v in bs]
    K = len(xs)
    if not K or not len(Ws) == len(Us) == len(bs) == K:
        raise ShapeError("lstm: need one (W, U, b) triple per input")
    if xs[0].value.ndim != 3:
        raise ShapeError(f"lstm: input must be (B, T, D), got {xs[0].shape}")
    B, T, D = xs[0].shape
    if T == 0:
        raise ValueError("lstm: empty sequence")
    H = Us[0].shape[0]
    for x, W, U, b in zip(xs, Ws, Us, bs):
        if x.shape != (B, T, D) or W.shape != (D, 4 * H) or U.shape != (H, 4 * H) or b.shape != (4 * H,):
            raise ShapeError(
                f"lstm: input {x.shape} with W {W.shape}, U {U.shape}, b {b.shape} is inconsistent"
            )
    Uv = np.stack([U.value for U in Us])
    xw = np.stack([(x.value @ W.value + b.value).transpose(1, 0, 2) for x, W, b in zip(xs, Ws, bs)], axis=1)
    gates = np.empty((T, K, B, 4 * H))
    c = np.empty((T, K, B, H))
    tc = np.empty((T, K, B, H))
    h = np.empty((T, K, B, H))
    h_prev = np.zeros((K, B, H))
    c_prev = np.zeros((K, B, H))
    for t in range(T):
        a = xw[t] + np.matmul(h_prev, Uv)
        act = gates[t]
        expit(a, out=act)
        act[..., 2 * H : 3 * H] = np.tanh(a[..., 2 * H : 3 * H])
        c_prev = act[..., H : 2 * H] * c_prev + act[..., :H] * act[..., 2 * H : 3 * H]
        c[t] = c_prev
        np.tanh(c_prev, out=tc[t])
        h_prev = act[..., 3 * H :] * tc[t]
        h[t] = h_prev
    out = np.ascontiguousarray(h.transpose(1, 2, 0, 3))

    def back(g):
        gh_all = g.transpose(2, 0, 1, 3)
        UvT = Uv.transpose(0, 2, 1)
        da = np.empty((T, K, B, 4 * H))
        dh_next = np.zeros((K, B, H))
        dc_next = np.zeros((K, B, H))
        zero = np.zeros((K, B, H))
        for t in range(T - 1, -1, -1):
            act = gates[t]
            gi, gf = act[..., :H], act[..., H : 2 * H]
            gg, go = act[..., 2 * H : 3 * H], act[..., 3 * H :]
            dh = gh_all[t] + dh_next
            dc = dc_next + dh * go * (1.0 - tc[t] ** 2)
            c_before = c[t - 1] if t > 0 else zero
            d = da[t]
            d[..., :H] = dc * gg * gi * (1.0 - gi)
            d[..., H : 2 * H] = dc * c_before * gf * (1.0 - gf)
            d[..., 2 * H : 3 * H] = dc * gi * (1.0 - gg * gg)
            d[..., 3 * H :] = dh * tc[t] * go * (1.0 - go)
            dc_next = dc * gf
            dh_next = np.matmul(d, UvT)
        h_before = np.concatenate([np.zeros((1, K, B, H)), h[:-1]], axis=0)
        gxs, gWs, gUs, gbs = [], [], [], []
        for k in range(K):
            dak = da[:, k].reshape(-1, 4 * H)  # rows ordered (t, b)
            xk = xs[k].value.transpose(1, 0, 2).reshape(-1, D)
            gxs.append((da[:, k] @ Ws[k].value.T).transpose(1, 0, 2))
            gWs.append(xk.T @ dak)
            gUs.append(h_before[:, k].reshape(-1, H).T @ dak)
            gbs.append(dak.sum(axis=0))
        return tuple(gxs + gWs + gUs + gbs)

    return _node("lstm", out, tuple(xs + Ws + Us + bs), back)


def index(x: Node, k: int) -> Node:
    """``x[k]`` along the leading axis."""

    def back(g):
        full = np.zeros(x.shape)
        full[k] = g
        return (full,)

    return Node(x.value[k], (x,), back)


def slice_last(x: Node, lo: int, hi: int) -> Node:
    """``x[..., lo:hi]``."""

    def back(g):
        full = np.zeros(x.shape)
        full[..., lo:hi] = g
        return (full,)

    return _node("slice_last", x.value[..., lo:hi].copy(), (x,), back)
