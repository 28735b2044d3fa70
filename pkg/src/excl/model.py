"""Run configuration and the assembled encoder + predictor model."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import objectives
from .diffcore import Node, Rng, parameter
from .encoders import Vocabulary, encode_query, encode_video, init_bilstm, load_glove
from .inference import decode_span, frames_to_seconds
from .predictors import VARIANTS, init_predictor, predict


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    objective: str = "clf"
    video_lstm: int = 2
    predictor: str = "b"
    embedding_dim: int = 300
    query_hidden: int = 256
    video_hidden: int = 256
    predictor_hidden: int = 128
    mlp_hidden: int = 256
    batch_size: int = 32
    lr: float = 0.001
    dropout: float = 0.5
    max_epochs: int = 30
    fps: float = 5.0
    vocab_size: int = 10000
    reg_loss: str = "abs"
    seed: int = 0
    patience: int = 5
    glove_path: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(ok, name, domain):
            if not ok:
                raise ConfigError(f"invalid config field {name}={getattr(self, name)!r}; allowed: {domain}")

        need(self.objective in ("clf", "reg"), "objective", "clf | reg")
        need(self.video_lstm in (1, 2), "video_lstm", "1 (off) | 2 (on)")
        need(self.predictor in VARIANTS, "predictor", "a | b | c")
        for name in ("embedding_dim", "query_hidden", "video_hidden", "predictor_hidden",
                     "mlp_hidden", "batch_size", "max_epochs"):
            need(isinstance(getattr(self, name), int) and getattr(self, name) >= 1, name, "integer >= 1")
        need(isinstance(self.vocab_size, int) and self.vocab_size >= 0, "vocab_size", "integer >= 0")
        need(isinstance(self.patience, int) and self.patience >= 0, "patience", "integer >= 0")
        need(self.lr > 0, "lr", "> 0")
        need(0.0 <= self.dropout < 1.0, "dropout", "0 <= p < 1")
        need(self.fps > 0, "fps", "> 0")
        need(self.reg_loss in objectives.LOSS_KINDS, "reg_loss", "abs | mse")
        need(isinstance(self.seed, int) and self.seed >= 0, "seed", "integer >= 0")

    @property
    def label(self) -> str:
        return f"ExCL-{self.objective} {self.video_lstm}-{self.predictor}"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not a JSON object ({exc})") from exc
        if not isinstance(d, dict) or any(isinstance(v, (dict, list)) for v in d.values()):
            raise ConfigError(f"{path}: config must be a flat JSON object")
        return cls.from_dict(d)


class ExclModel:
    """Query encoder, optional video BiLSTM and one span predictor head."""

    def __init__(self, cfg: RunConfig, vocab: Vocabulary, feature_dim: int, rng: Rng | None = None,
                 embeddings: np.ndarray | None = None):
        self.cfg = cfg
        self.vocab = vocab
        self.feature_dim = int(feature_dim)
        rng = rng or Rng(cfg.seed)
        if embeddings is None:
            if cfg.glove_path:
                embeddings = load_glove(cfg.glove_path, vocab, cfg.embedding_dim, rng)
            else:
                embeddings = rng.normal(0.0, 0.1, size=(len(vocab), cfg.embedding_dim))
        if embeddings.shape != (len(vocab), cfg.embedding_dim):
            raise ConfigError(f"embedding table shape {embeddings.shape} does not match vocabulary/embedding_dim")
        self.embeddings = parameter(embeddings, "embeddings")
        self.query_lstm = init_bilstm(rng, cfg.embedding_dim, cfg.query_hidden, "query_lstm")
        self.video_lstm = init_bilstm(rng, feature_dim, cfg.video_hidden, "video_lstm") if cfg.video_lstm == 2 else None
        video_dim = 2 * cfg.video_hidden if cfg.video_lstm == 2 else feature_dim
        self.predictor = init_predictor(rng, cfg.predictor, video_dim, 2 * cfg.query_hidden,
                                        cfg.predictor_hidden, cfg.mlp_hidden)

    @property
    def label(self) -> str:
        return self.cfg.label

    def parameters(self) -> dict[str, Node]:
        out = {"embeddings": self.embeddings}
        out.update(self.query_lstm.named("query_lstm"))
        if self.video_lstm is not None:
            out.update(self.video_lstm.named("video_lstm"))
        out.update(self.predictor.named("pred"))
        return out

    def scores(self, batch, train: bool = False, rng: Rng | None = None):
        if batch.features.shape[2] != self.feature_dim:
            raise ValueError(f"feature dim {batch.features.shape[2]} does not match model ({self.feature_dim})")
        p = self.cfg.dropout if train else 0.0
        hT = encode_query(batch.token_ids, self.embeddings, self.query_lstm, p, train, rng)
        hV = encode_video(batch.features, batch.frame_mask, self.cfg.video_lstm == 2, self.video_lstm, p, train, rng)
        return predict(hV, hT, self.predictor, batch.frame_mask, p, train, rng)

    def loss(self, batch, train: bool = False, rng: Rng | None = None) -> Node:
        sc = self.scores(batch, train, rng)
        mask = batch.frame_mask
        if self.cfg.objective == "clf":
            s_idx = [t.start_idx for t in batch.targets]
            e_idx = [t.end_idx for t in batch.targets]
            return objectives.clf_nll_loss(sc.start, sc.end, s_idx, e_idx, mask)
        pred = self._expected(sc, batch)
        dur = batch.durations
        ts = np.array([t.start_sec for t in batch.targets]) / dur
        te = np.array([t.end_sec for t in batch.targets]) / dur
        return objectives.reg_loss(pred, ts, te, self.cfg.reg_loss)

    def _expected(self, sc, batch):
        start_t, end_t = objectives.normalized_frame_times(batch.lengths, batch.frame_mask.shape[1])
        return objectives.expected_times(sc.start, sc.end, start_t, batch.frame_mask, end_t)

    def predict_batch(self, batch) -> list[tuple[float, float]]:
        """(start_sec, end_sec) per item, eval mode."""
        sc = self.scores(batch, train=False)
        out = []
        if self.cfg.objective == "clf":
            for i in range(len(batch)):
                s, e = decode_span(sc.start.value[i], sc.end.value[i], batch.frame_mask[i])
                out.append(frames_to_seconds(s, e, batch.fps))
        else:
            pred = self._expected(sc, batch)
            for ts, te, d in zip(pred.t_s.value, pred.t_e.value, batch.durations):
                out.append((float(ts * d), float(te * d)))
        return out


def tiny_config(objective: str, video_lstm: int, predictor: str, hidden: int = 6, **kw) -> RunConfig:
    """Small-dimension config used by gradient checks."""
    kw.setdefault("embedding_dim", 5)
    return RunConfig(objective=objective, video_lstm=video_lstm, predictor=predictor, query_hidden=hidden,
                     video_hidden=hidden, predictor_hidden=hidden, mlp_hidden=hidden, dropout=0.0, **kw)

