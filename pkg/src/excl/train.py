"""Training loop with early stopping, evaluation and checkpoint files."""

from __future__ import annotations

import io
import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datapipe import make_batches
from .diffcore import AdamState, NonFiniteError, Rng, adam_step, backward
from .encoders import Vocabulary, build_vocab
from .inference import DEFAULT_THRESHOLDS, EvalConfig, ResultsRow, recall_at_1
from .model import ExclModel, RunConfig

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
EARLY_STOP_THRESHOLD = 0.5
EVAL_BATCH = 64


class CheckpointError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainResult:
    model: ExclModel
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("-inf")
    adam: AdamState | None = None


def predict_records(model: ExclModel, records, features) -> list[tuple[float, float]]:
    batches = make_batches(records, features, model.vocab, EVAL_BATCH, fps=model.cfg.fps)
    out = []
    for b in batches:
        out.extend(model.predict_batch(b))
    return out


def evaluate(model: ExclModel, records, features, thresholds=DEFAULT_THRESHOLDS) -> dict:
    """Recall@1 (percent) per IoU threshold over ``records``."""
    if not records:
        raise ValueError("evaluate: empty dataset")
    preds = predict_records(model, records, features)
    gts = [(r.start_sec, r.end_sec) for r in records]
    return recall_at_1(preds, gts, EvalConfig(tuple(thresholds), model.cfg.fps))


def metrics_row(label: str, metrics: dict, dataset: str = "eval") -> ResultsRow:
    return ResultsRow(label, {(dataset, t): v for t, v in metrics.items()})


def _metrics_json(metrics: dict) -> dict:
    return {f"R@1,IoU={t:g}": round(v, 6) for t, v in metrics.items()}


def train(cfg: RunConfig, train_records, val_records, features, out_dir=None,
          vocab: Vocabulary | None = None) -> TrainResult:
    """Adam training on ``train_records`` with early stopping on validation R@1, IoU=0.5.

    When ``out_dir`` is given, ``metrics.jsonl`` (one JSON line per epoch,
    epoch 0 = untrained model) and ``best.ckpt`` are written there.
    """
    if not train_records:
        raise ValueError("train: empty training set")
    if not val_records:
        raise ValueError("train: empty validation set")
    rng = Rng(cfg.seed)
    if vocab is None:
        vocab = build_vocab([r.query for r in train_records], cfg.vocab_size)
    feature_dim = int(np.asarray(next(iter(features.values()))).shape[1])
    model = ExclModel(cfg, vocab, feature_dim, rng.spawn(1))
    params = model.parameters()
    adam = AdamState(lr=cfg.lr)
    thresholds = DEFAULT_THRESHOLDS
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "metrics.jsonl", "w", encoding="utf-8")
    else:
        log_fh = None

    result = TrainResult(model, adam=adam)

    def record(entry):
        result.history.append(entry)
        if log_fh is not None:
            log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
            log_fh.flush()

    try:
        m0 = evaluate(model, val_records, features, thresholds)
        record({"epoch": 0, "loss": None, "val": _metrics_json(m0)})
        best_state = None
        for epoch in range(1, cfg.max_epochs + 1):
            batches = make_batches(train_records, features, vocab, cfg.batch_size, rng.spawn(1000 + epoch), cfg.fps)
            drop_rng = rng.spawn(2_000_000 + epoch)
            losses = []
            for bi, batch in enumerate(batches):
                for p in params.values():
                    p.zero_grad()
                try:
                    loss = model.loss(batch, train=True, rng=drop_rng)
                    backward(loss)
                    adam_step(params, adam)
                except NonFiniteError as exc:
                    raise TrainingDiverged(f"non-finite value at epoch {epoch}, batch {bi}: {exc}") from exc
                losses.append(float(loss.value))
            metrics = evaluate(model, val_records, features, thresholds)
            mean_loss = float(np.mean(losses))
            record({"epoch": epoch, "loss": round(mean_loss, 10), "val": _metrics_json(metrics)})
            log.info("epoch %d loss %.4f val %s", epoch, mean_loss, metrics)
            score = metrics[EARLY_STOP_THRESHOLD]
            if score > result.best_metric:
                result.best_metric, result.best_epoch = score, epoch
                best_state = {k: p.value.copy() for k, p in params.items()}
                if out is not None:
                    save_checkpoint(out / "best.ckpt", model, adam, epoch, score)
            if epoch - result.best_epoch >= cfg.patience:
                break
        if best_state is not None:
            for k, p in params.items():
                p.value[...] = best_state[k]
    finally:
        if log_fh is not None:
            log_fh.close()
    return result


def save_checkpoint(path, model: ExclModel, adam: AdamState | None = None, epoch: int = 0,
                    best_metric: float | None = None) -> None:
    """Single ``.npz`` file: a JSON ``meta`` entry plus one array per parameter and Adam moment."""
    params = model.parameters()
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "vocab": model.vocab.tokens[2:],
        "feature_dim": model.feature_dim,
        "param_names": list(params),
        "epoch": epoch,
        "best_metric": best_metric,
        "adam": None if adam is None else {k: getattr(adam, k) for k in ("lr", "beta1", "beta2", "eps", "t")},
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    for name, p in params.items():
        arrays[f"param/{name}"] = p.value
        if adam is not None and name in adam.m:
            arrays[f"adam_m/{name}"] = adam.m[name]
            arrays[f"adam_v/{name}"] = adam.v[name]
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


@dataclass
class Checkpoint:
    model: ExclModel
    adam: AdamState | None
    epoch: int
    best_metric: float | None
    meta: dict


def load_checkpoint(path) -> Checkpoint:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(bytes(z["meta"]).decode("utf-8"))
            version = meta.get("format_version")
            if not isinstance(version, int) or version > CHECKPOINT_VERSION or version < 1:
                raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
            cfg = RunConfig.from_dict(meta["config"])
            vocab = Vocabulary(meta["vocab"])
            model = ExclModel(cfg, vocab, meta["feature_dim"], Rng(0), embeddings=z["param/embeddings"])
            params = model.parameters()
            if list(params) != meta["param_names"]:
                raise CheckpointError(f"{path}: parameter set does not match the configured model")
            for name, p in params.items():
                arr = z[f"param/{name}"]
                if arr.shape != p.value.shape:
                    raise CheckpointError(f"{path}: shape mismatch for {name}")
                p.value[...] = arr
            adam = None
            if meta.get("adam") is not None:
                adam = AdamState(**meta["adam"])
                for name in params:
                    if f"adam_m/{name}" in z.files:
                        adam.m[name] = z[f"adam_m/{name}"].copy()
                        adam.v[name] = z[f"adam_v/{name}"].copy()
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, EOFError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    return Checkpoint(model, adam, meta.get("epoch", 0), meta.get("best_metric"), meta)
