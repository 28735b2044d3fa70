"""Turning start/end scores into a span, and scoring spans with temporal IoU."""

import numpy as np

from excl.inference import (
    decode_span,
    decode_span_bruteforce,
    frames_to_seconds,
    recall_at_1,
    seconds_to_frames,
    temporal_iou,
)
from excl.objectives import cond_end_distribution, expected_times

rng = np.random.default_rng(1)
T = 12
s_start = rng.normal(size=T)
s_end = rng.normal(size=T)

# best (s, e) with s <= e in one backward sweep, and the quadratic version for comparison
s, e = decode_span(s_start, s_end)
print("decoded frames", (s, e), "brute force", decode_span_bruteforce(s_start, s_end))

# frame t covers [t/fps, (t+1)/fps)
fps = 5.0
span = frames_to_seconds(s, e, fps)
print("seconds", span, "and back", seconds_to_frames(*span, fps, T))

# the regression head reads expected times instead of an argmax
times = np.arange(T) / T
pred = expected_times(s_start, s_end, times)
print("expected start %.3f, expected end %.3f (fractions of the clip)" % (pred.t_s.value, pred.t_e.value))

# P(end | start) puts zero mass before the start
M = cond_end_distribution(s_end)
print("row 5 of P(end|start):", np.round(M[5], 3))

# IoU and Recall@1
print("iou([0,2],[1,3]) =", temporal_iou([0, 2], [1, 3]))
preds = [(0.0, 2.0), (0.0, 4.0), (3.0, 5.0)]
truth = [(0.0, 5.0), (0.0, 5.0), (0.0, 2.0)]
print("Recall@1 by threshold", recall_at_1(preds, truth))
