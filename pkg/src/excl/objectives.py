"""Training objectives: frame-index NLL (clf) and expected-time regression (reg).

All functions accept a single sequence (T,) or a batch (B, T) of scores,
as nodes or plain arrays, and return nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Node, ops

LOSS_KINDS = ("abs", "mse")


@dataclass
class SpanTarget:
    start_sec: float
    end_sec: float
    start_idx: int
    end_idx: int

    def __post_init__(self):
        if not 0 <= self.start_sec <= self.end_sec:
            raise ValueError(f"invalid target seconds ({self.start_sec}, {self.end_sec})")
        if not 0 <= self.start_idx <= self.end_idx:
            raise ValueError(f"invalid target frames ({self.start_idx}, {self.end_idx})")


@dataclass
class RegPrediction:
    t_s: Node
    t_e: Node


def _as_batch(x, mask):
    x = ops.as_node(x)
    single = x.value.ndim == 1
    if single:
        x = ops.reshape(x, (1, -1))
    mask = np.ones(x.shape, bool) if mask is None else np.asarray(mask, bool).reshape(x.shape)
    return x, mask, single


def clf_nll_loss(S_start, S_end, start_idx, end_idx, mask=None) -> Node:
    """-(1/N) sum_i [log P_start(s_i) + log P_end(e_i)] with softmax over valid frames."""
    S_start, mask, _ = _as_batch(S_start, mask)
    S_end, _, _ = _as_batch(S_end, mask)
    start_idx = np.atleast_1d(np.asarray(start_idx, dtype=np.int64))
    end_idx = np.atleast_1d(np.asarray(end_idx, dtype=np.int64))
    rows = np.arange(mask.shape[0])
    for name, idx in (("start", start_idx), ("end", end_idx)):
        if idx.shape != rows.shape or np.any(idx < 0) or np.any(idx >= mask.shape[1]) or not np.all(mask[rows, idx]):
            raise ValueError(f"clf_nll_loss: {name} target index falls on a padded or missing frame")
    logp_s = ops.pick(ops.log_softmax(S_start, mask), start_idx)
    logp_e = ops.pick(ops.log_softmax(S_end, mask), end_idx)
    return ops.scale(ops.mean(ops.add(logp_s, logp_e)), -1.0)


def _cond_mask(mask: np.ndarray) -> np.ndarray:
    T = mask.shape[1]
    upper = np.arange(T)[None, :] >= np.arange(T)[:, None]
    cm = mask[:, None, :] & upper[None]
    # rows for padded starts would be empty; they carry zero start mass anyway
    empty = ~cm.any(axis=2)
    return np.where(empty[:, :, None], mask[:, None, :], cm)


def cond_end_node(S_end, mask=None) -> Node:
    """(B, T, T) node; row s is the end distribution given start s."""
    S_end, mask, _ = _as_batch(S_end, mask)
    B, T = S_end.shape
    logits = ops.broadcast_to(ops.reshape(S_end, (B, 1, T)), (B, T, T))
    return ops.softmax(logits, _cond_mask(mask), axis=-1)


def cond_end_distribution(S_end, mask=None) -> np.ndarray:
    """T x T row-stochastic matrix, row s = masked softmax of S_end over {e >= s}."""
    S_end = np.asarray(getattr(S_end, "value", S_end), dtype=np.float64)
    out = cond_end_node(S_end, mask).value
    return out[0] if S_end.ndim == 1 else out


def expected_times(S_start, S_end, frame_times, mask=None, end_times=None) -> RegPrediction:
    """Expected start and end times under the predicted distributions.

    t_s = sum_s P_start(s) time(s)
    t_e = sum_s P_start(s) sum_e P_end|start(e|s) end_time(e)

    ``end_times`` defaults to ``frame_times``.
    """
    S_start, mask, single = _as_batch(S_start, mask)
    S_end, _, _ = _as_batch(S_end, mask)
    start_t = np.asarray(frame_times, dtype=np.float64).reshape(mask.shape)
    end_t = start_t if end_times is None else np.asarray(end_times, dtype=np.float64).reshape(mask.shape)
    if np.any(np.diff(start_t, axis=1)[mask[:, 1:]] < 0):
        raise ValueError("expected_times: frame_times must be nondecreasing")
    start_t = np.where(mask, start_t, 0.0)
    end_t = np.where(mask, end_t, 0.0)
    p_start = ops.softmax(S_start, mask)
    t_s = ops.sum_axis(ops.mul(p_start, start_t), axis=1)
    cond = cond_end_node(S_end, mask)
    inner = ops.sum_axis(ops.mul(cond, end_t[:, None, :]), axis=2)
    t_e = ops.sum_axis(ops.mul(p_start, inner), axis=1)
    if single:
        t_s, t_e = ops.reshape(t_s, ()), ops.reshape(t_e, ())
    return RegPrediction(t_s, t_e)


def reg_loss(pred: RegPrediction, target_start, target_end, kind: str = "abs") -> Node:
    """Batch mean of |dt_s| + |dt_e| (``abs``) or dt_s^2 + dt_e^2 (``mse``) on normalized times."""
    if kind not in LOSS_KINDS:
        raise ValueError(f"reg_loss: kind must be one of {LOSS_KINDS}, got {kind!r}")
    ts = np.asarray(target_start, dtype=np.float64).reshape(pred.t_s.shape)
    te = np.asarray(target_end, dtype=np.float64).reshape(pred.t_e.shape)
    if np.any(ts < -1e-9) or np.any(te > 1 + 1e-9) or np.any(ts > te + 1e-9):
        raise ValueError("reg_loss: normalized target outside [0, 1]; annotation exceeds clip duration")
    diff = ops.abs_diff if kind == "abs" else ops.sq_diff
    per_item = ops.add(diff(pred.t_s, ts), diff(pred.t_e, te))
    return ops.mean(per_item)


def normalized_frame_times(lengths, T: int):
    """Per-frame (start, end) times as fractions of each clip: t/len and (t+1)/len."""
    lengths = np.asarray(lengths, dtype=np.float64).reshape(-1, 1)
    pos = np.arange(T, dtype=np.float64)[None, :]
    valid = pos < lengths
    return np.where(valid, pos / lengths, 0.0), np.where(valid, (pos + 1.0) / lengths, 0.0)
