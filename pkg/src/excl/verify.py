"""Finite-difference checks over every model variant, plus a synthetic train/test harness."""

from __future__ import annotations

import dataclasses
import itertools
import time
from dataclasses import dataclass

import numpy as np

from .datapipe import AnnotationRecord, SynthConfig, generate_synthetic, make_batches
from .diffcore import Rng, grad_check
from .encoders import Vocabulary
from .model import ExclModel, RunConfig, tiny_config
from .train import evaluate, train

OBJECTIVES = ("clf", "reg")
VIDEO_LSTM = (1, 2)
PREDICTORS = ("a", "b", "c")
TOLERANCE = 1e-3


def tiny_batch(feature_dim: int = 5, seed: int = 0):
    """Two items: 7 and 5 frames, queries of 4 and 3 tokens."""
    rng = Rng(seed)
    vocab = Vocabulary(["w1", "w2", "w3", "w4"])
    feats = {"v0": rng.normal(size=(7, feature_dim)), "v1": rng.normal(size=(5, feature_dim))}
    records = [
        AnnotationRecord("v0", 0.4, 1.0, "w1 w2 w3 w4", "r0"),
        AnnotationRecord("v1", 0.2, 0.6, "w2 w4 w1", "r1"),
    ]
    return vocab, make_batches(records, feats, vocab, batch_size=2)[0]


def gradcheck_variant(objective: str, video_lstm: int, predictor: str, eps: float = 1e-4, seed: int = 0) -> float:
    vocab, batch = tiny_batch(seed=seed)
    cfg = tiny_config(objective, video_lstm, predictor, seed=seed)
    model = ExclModel(cfg, vocab, batch.features.shape[2], Rng(seed + 1))
    return grad_check(lambda: model.loss(batch), model.parameters(), eps)


def gradcheck_all(eps: float = 1e-4, seed: int = 0) -> list[dict]:
    rows = []
    for obj, vl, pr in itertools.product(OBJECTIVES, VIDEO_LSTM, PREDICTORS):
        err = gradcheck_variant(obj, vl, pr, eps, seed)
        rows.append({"variant": f"ExCL-{obj} {vl}-{pr}", "max_rel_error": err, "ok": bool(np.isfinite(err) and err < TOLERANCE)})
    return rows


@dataclass
class ExperimentResult:
    label: str
    test: dict
    best_epoch: int
    epochs_run: int
    seconds: float
    history: list


def synthetic_experiment(synth: SynthConfig, run: RunConfig, n_train: int, n_val: int, n_test: int,
                         out_dir=None) -> ExperimentResult:
    """Generate a synthetic set, take contiguous train/val/test slices, train and score the test slice."""
    if synth.num_items != n_train + n_val + n_test:
        synth = dataclasses.replace(synth, num_items=n_train + n_val + n_test)
    data = generate_synthetic(synth)
    recs = data.records
    tr, va, te = recs[:n_train], recs[n_train : n_train + n_val], recs[n_train + n_val :]
    t0 = time.perf_counter()
    res = train(run, tr, va, data.features, out_dir=out_dir)
    test = evaluate(res.model, te, data.features)
    return ExperimentResult(run.label, test, res.best_epoch, len(res.history) - 1,
                            time.perf_counter() - t0, res.history)
