"""Span predictor heads mapping (h^V_t, h^T) to per-frame start/end scores.

Variants: ``a`` MLP, ``b`` tied BiLSTM + MLPs, ``c`` conditioned (stacked)
BiLSTMs + single affine heads. Start and end heads never share parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Node, Rng, ops, parameter
from .encoders import BiLstmParams, bilstm, init_bilstm

VARIANTS = ("a", "b", "c")


@dataclass
class SpanScores:
    start: Node
    end: Node


@dataclass
class PredictorState:
    hidden: Node
    hidden_end: Node | None = None


@dataclass
class Mlp:
    """One tanh hidden layer and a scalar linear output."""

    W1: Node
    b1: Node
    W2: Node
    b2: Node

    def __call__(self, x: Node) -> Node:
        h = ops.tanh(ops.affine(x, self.W1, self.b1))
        out = ops.affine(h, self.W2, self.b2)
        return ops.reshape(out, out.shape[:-1])

    def named(self, prefix):
        return {f"{prefix}.{k}": getattr(self, k) for k in ("W1", "b1", "W2", "b2")}


@dataclass
class Linear:
    W: Node
    b: Node

    def __call__(self, x: Node) -> Node:
        out = ops.affine(x, self.W, self.b)
        return ops.reshape(out, out.shape[:-1])

    def named(self, prefix):
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b}


@dataclass
class PredictorParams:
    variant: str
    start_head: Mlp | Linear
    end_head: Mlp | Linear
    lstm: BiLstmParams | None = None
    lstm_end: BiLstmParams | None = None

    def named(self, prefix="pred") -> dict[str, Node]:
        out = {}
        if self.lstm is not None:
            out.update(self.lstm.named(f"{prefix}.lstm"))
        if self.lstm_end is not None:
            out.update(self.lstm_end.named(f"{prefix}.lstm_end"))
        out.update(self.start_head.named(f"{prefix}.start"))
        out.update(self.end_head.named(f"{prefix}.end"))
        return out


def init_mlp(rng: Rng, input_dim: int, hidden: int, name="mlp") -> Mlp:
    k1, k2 = 1.0 / np.sqrt(input_dim), 1.0 / np.sqrt(hidden)
    return Mlp(
        parameter(rng.uniform(-k1, k1, (input_dim, hidden)), f"{name}.W1"),
        parameter(np.zeros(hidden), f"{name}.b1"),
        parameter(rng.uniform(-k2, k2, (hidden, 1)), f"{name}.W2"),
        parameter(np.zeros(1), f"{name}.b2"),
    )


def init_linear(rng: Rng, input_dim: int, name="linear") -> Linear:
    k = 1.0 / np.sqrt(input_dim)
    return Linear(parameter(rng.uniform(-k, k, (input_dim, 1)), f"{name}.W"), parameter(np.zeros(1), f"{name}.b"))


def init_predictor(rng: Rng, variant: str, video_dim: int, query_dim: int,
                   lstm_hidden: int = 128, mlp_hidden: int = 256) -> PredictorParams:
    """Parameters for one variant; ``video_dim``/``query_dim`` are the widths of h^V_t and h^T."""
    if variant not in VARIANTS:
        raise ValueError(f"predictor variant must be one of {VARIANTS}, got {variant!r}")
    base = video_dim + query_dim
    if variant == "a":
        return PredictorParams("a", init_mlp(rng, base, mlp_hidden, "start"), init_mlp(rng, base, mlp_hidden, "end"))
    lstm = init_bilstm(rng, base, lstm_hidden, "pred_lstm")
    head_in = 2 * lstm_hidden + base
    if variant == "b":
        return PredictorParams(
            "b", init_mlp(rng, head_in, mlp_hidden, "start"), init_mlp(rng, head_in, mlp_hidden, "end"), lstm
        )
    lstm_end = init_bilstm(rng, 2 * lstm_hidden, lstm_hidden, "pred_lstm_end")
    return PredictorParams("c", init_linear(rng, head_in, "start"), init_linear(rng, head_in, "end"), lstm, lstm_end)


def _prepare(hV, hT, mask):
    hV, hT = ops.as_node(hV), ops.as_node(hT)
    single = hV.value.ndim == 2
    if single:
        hV = ops.reshape(hV, (1,) + hV.shape)
        hT = ops.reshape(hT, (1,) + hT.shape)
    if hV.value.ndim != 3 or hT.value.ndim != 2 or hT.shape[0] != hV.shape[0]:
        raise ops.ShapeError(f"predictor: incompatible h^V {hV.shape} and h^T {hT.shape}")
    if mask is None:
        mask = np.ones(hV.shape[:2], dtype=bool)
    x = ops.concat([hV, ops.expand_time(hT, hV.shape[1])], axis=-1)
    return x, np.asarray(mask, dtype=bool), single


def _finish(start, end, single):
    if single:
        start, end = ops.reshape(start, start.shape[1:]), ops.reshape(end, end.shape[1:])
    return SpanScores(start, end)


def _state(single, *hidden):
    if single:
        hidden = [ops.reshape(h, h.shape[1:]) for h in hidden]
    return PredictorState(*hidden)


def predict_mlp(hV, hT, params: PredictorParams, mask=None) -> SpanScores:
    x, _, single = _prepare(hV, hT, mask)
    return _finish(params.start_head(x), params.end_head(x), single)


def predict_tied(hV, hT, params: PredictorParams, mask=None, dropout=0.0, train=False, rng=None):
    x, mask, single = _prepare(hV, hT, mask)
    hP, _, _ = bilstm(x, mask, params.lstm, dropout, train, rng)
    z = ops.concat([hP, x], axis=-1)
    return _finish(params.start_head(z), params.end_head(z), single), _state(single, hP)


def predict_conditioned(hV, hT, params: PredictorParams, mask=None, dropout=0.0, train=False, rng=None):
    x, mask, single = _prepare(hV, hT, mask)
    hP0, _, _ = bilstm(x, mask, params.lstm, dropout, train, rng)
    hP1, _, _ = bilstm(hP0, mask, params.lstm_end, dropout, train, rng)
    start = params.start_head(ops.concat([hP0, x], axis=-1))
    end = params.end_head(ops.concat([hP1, x], axis=-1))
    return _finish(start, end, single), _state(single, hP0, hP1)


def predict(hV, hT, params: PredictorParams, mask=None, dropout=0.0, train=False, rng=None) -> SpanScores:
    if params.variant == "a":
        return predict_mlp(hV, hT, params, mask)
    if params.variant == "b":
        return predict_tied(hV, hT, params, mask, dropout, train, rng)[0]
    return predict_conditioned(hV, hT, params, mask, dropout, train, rng)[0]
