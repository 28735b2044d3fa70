"""Span decoding, frame/second conversion, temporal IoU and Recall@1."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .diffcore import masked_softmax

DEFAULT_THRESHOLDS = (0.3, 0.5, 0.7)


@dataclass
class EvalConfig:
    thresholds: tuple = DEFAULT_THRESHOLDS
    fps: float = 5.0

    def __post_init__(self):
        th = tuple(float(t) for t in self.thresholds)
        if not th or any(not 0.0 < t <= 1.0 for t in th) or any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError(f"thresholds must lie in (0, 1] and strictly increase, got {th}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        self.thresholds = th


@dataclass
class SpanPrediction:
    start_sec: float
    end_sec: float
    start_idx: int | None = None
    end_idx: int | None = None
    variant: str = ""


@dataclass
class ResultsRow:
    label: str
    cells: dict = field(default_factory=dict)  # (dataset, threshold) -> percentage


def _valid_scores(S_start, S_end, mask):
    s = np.asarray(S_start, dtype=np.float64)
    e = np.asarray(S_end, dtype=np.float64)
    if s.shape != e.shape or s.ndim != 1:
        raise ValueError(f"decode: score shapes {s.shape} and {e.shape} must be equal 1-D")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        n = int(mask.sum())
        if n and not mask[:n].all():
            raise ValueError("decode: mask must be a prefix")
    else:
        n = s.size
    if n == 0:
        raise ValueError("decode: empty mask")
    return s[:n], e[:n]


def decode_span(S_start, S_end, mask=None) -> tuple[int, int]:
    """argmax of S_start[s] + S_end[e] over s <= e, in O(T).

    Ties go to the smallest s, then the smallest e.
    """
    s, e = _valid_scores(S_start, S_end, mask)
    T = s.size
    # best end at or after each position; ">=" in the backward sweep keeps the smallest index
    best_e = np.empty(T, dtype=np.int64)
    cur = T - 1
    for t in range(T - 1, -1, -1):
        if e[t] >= e[cur]:
            cur = t
        best_e[t] = cur
    totals = s + e[best_e]
    start = int(np.argmax(totals))
    return start, int(best_e[start])


def decode_span_bruteforce(S_start, S_end, mask=None) -> tuple[int, int]:
    s, e = _valid_scores(S_start, S_end, mask)
    best, arg = -math.inf, None
    for i in range(s.size):
        for j in range(i, s.size):
            v = s[i] + e[j]
            if v > best:
                best, arg = v, (i, j)
    return arg


def decode_span_probability(S_start, S_end, mask=None) -> tuple[int, int]:
    """argmax of P_start[s] * P_end[e] over s <= e, scanning every pair."""
    s, e = _valid_scores(S_start, S_end, mask)
    ps, pe = masked_softmax(s), masked_softmax(e)
    joint = np.triu(np.outer(ps, pe))
    i, j = np.unravel_index(int(np.argmax(joint)), joint.shape)
    return int(i), int(j)


def frames_to_seconds(s: int, e: int, fps: float = 5.0) -> tuple[float, float]:
    """Frame t covers [t/fps, (t+1)/fps)."""
    if s > e:
        raise ValueError(f"frames_to_seconds: start frame {s} after end frame {e}")
    return s / fps, (e + 1) / fps


def seconds_to_frames(start_sec: float, end_sec: float, fps: float, T: int) -> tuple[int, int]:
    if end_sec < start_sec:
        raise ValueError(f"seconds_to_frames: end {end_sec} before start {start_sec}")
    # rounding absorbs float noise such as 0.6 * 5 = 3.0000000000000004
    s = math.floor(round(start_sec * fps, 9))
    s = min(max(s, 0), T - 1)
    e = math.ceil(round(end_sec * fps, 9)) - 1
    e = min(max(e, s), T - 1)
    return s, e


def temporal_iou(a, b) -> float:
    a0, a1 = float(a[0]), float(a[1])
    b0, b1 = float(b[0]), float(b[1])
    if a1 < a0 or b1 < b0:
        raise ValueError(f"temporal_iou: malformed interval {a} or {b}")
    inter = max(0.0, min(a1, b1) - max(a0, b0))
    union = max(a1, b1) - min(a0, b0)
    if union <= 0.0:
        return 1.0 if (a0, a1) == (b0, b1) else 0.0
    return inter / union


def recall_at_1(predictions, ground_truths, cfg: EvalConfig | None = None) -> dict:
    """Percentage of queries with IoU >= threshold, keyed by threshold."""
    cfg = cfg or EvalConfig()
    if len(predictions) != len(ground_truths):
        raise ValueError(f"recall_at_1: {len(predictions)} predictions vs {len(ground_truths)} ground truths")
    if not predictions:
        raise ValueError("recall_at_1: no predictions")
    ious = np.array([temporal_iou(p, g) for p, g in zip(predictions, ground_truths)])
    n = len(ious)
    return {th: 100.0 * int(np.sum(ious >= th)) / n for th in cfg.thresholds}


def emit_results_table(rows, datasets, thresholds=DEFAULT_THRESHOLDS) -> str:
    """Plain-text table in the layout of a per-dataset Recall@1 grid.

    Cells are one-decimal percentages; absent cells print ``--``.
    """
    thresholds = tuple(thresholds)
    text = {}
    for r in rows:
        for d in datasets:
            for t in thresholds:
                v = r.cells.get((d, t))
                text[r.label, d, t] = "--" if v is None else f"{v:.1f}"
    cell_w = max([4] + [len(v) for v in text.values()])
    group_w = len(thresholds) * (cell_w + 1) - 1
    label_w = max([len("IoU")] + [len(r.label) for r in rows])
    top = " " * label_w + "".join(f" | {d[:group_w]:^{group_w}}" for d in datasets)
    ths = " ".join(f"{t:>{cell_w}}" for t in thresholds)
    second = f"{'IoU':<{label_w}}" + "".join(f" | {ths}" for _ in datasets)
    lines = [top.rstrip(), second, "-" * len(second)]
    for r in rows:
        groups = [" ".join(f"{text[r.label, d, t]:>{cell_w}}" for t in thresholds) for d in datasets]
        lines.append(f"{r.label:<{label_w}}" + "".join(f" | {g}" for g in groups))
    return "\n".join(lines) + "\n"


def write_predictions(path, items) -> None:
    """``items``: iterable of (id, start_sec, end_sec)."""
    with open(path, "w", encoding="utf-8") as fh:
        for pid, s, e in items:
            fh.write(json.dumps({"id": pid, "start_sec": float(s), "end_sec": float(e)}) + "\n")


def read_predictions(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out[str(obj["id"])] = (float(obj["start_sec"]), float(obj["end_sec"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad prediction line ({exc})") from exc
    return out
