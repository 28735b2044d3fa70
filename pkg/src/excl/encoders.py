"""Vocabulary, GloVe loading, bidirectional LSTMs and the query/video encoders.

Hidden sizes are per direction: a BiLSTM with ``hidden=256`` emits 512-d
states (forward half first, backward half second).
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffcore import Node, Rng, ops, parameter

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1

_TOKEN = re.compile(r"[\w']+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens):
        self.tokens = [PAD, UNK] + [t for t in tokens if t not in (PAD, UNK)]
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode(self, text_or_tokens) -> list[int]:
        toks = tokenize(text_or_tokens) if isinstance(text_or_tokens, str) else text_or_tokens
        return [self.lookup(t) for t in toks]

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.tokens[2:]), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens


def build_vocab(corpus, max_size: int) -> Vocabulary:
    """Keep the ``max_size`` most frequent tokens; ties go to the lexicographically smaller token."""
    if max_size < 0:
        raise ValueError("max_size must be >= 0")
    counts = Counter()
    for doc in corpus:
        counts.update(tokenize(doc) if isinstance(doc, str) else doc)
    for reserved in (PAD, UNK):
        counts.pop(reserved, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([tok for tok, _ in ranked[:max_size]])


def load_glove(path, vocab: Vocabulary, dim: int = 300, rng: Rng | None = None) -> np.ndarray:
    """Embedding matrix for ``vocab`` from a GloVe-format text file.

    Rows for tokens found in the file are copied verbatim; every other row
    (PAD and UNK included) is drawn from N(0, 0.1^2) using ``rng``.
    """
    rng = rng or Rng(0)
    table = rng.normal(0.0, 0.1, size=(len(vocab), dim))
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read embedding file {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            if len(parts) - 1 != dim:
                raise ValueError(
                    f"{path}:{lineno}: expected {dim} values for {parts[0]!r}, got {len(parts) - 1}"
                )
            idx = vocab.index.get(parts[0])
            if idx is not None:
                table[idx] = np.array(parts[1:], dtype=np.float64)
    return table


@dataclass
class LstmParams:
    """One direction. Gate blocks in W, U and b are ordered input, forget, cell, output."""

    W: Node
    U: Node
    b: Node

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[0]


@dataclass
class BiLstmParams:
    fw: LstmParams
    bw: LstmParams

    @property
    def hidden(self) -> int:
        return self.fw.hidden

    def named(self, prefix: str) -> dict[str, Node]:
        out = {}
        for direction, p in (("fw", self.fw), ("bw", self.bw)):
            for key in ("W", "U", "b"):
                out[f"{prefix}.{direction}.{key}"] = getattr(p, key)
        return out


def init_lstm(rng: Rng, input_dim: int, hidden: int, name: str = "lstm") -> LstmParams:
    k = 1.0 / np.sqrt(hidden)
    b = rng.uniform(-k, k, size=4 * hidden)
    b[hidden : 2 * hidden] += 1.0
    return LstmParams(
        parameter(rng.uniform(-k, k, size=(input_dim, 4 * hidden)), f"{name}.W"),
        parameter(rng.uniform(-k, k, size=(hidden, 4 * hidden)), f"{name}.U"),
        parameter(b, f"{name}.b"),
    )


def init_bilstm(rng: Rng, input_dim: int, hidden: int, name: str = "bilstm") -> BiLstmParams:
    return BiLstmParams(
        init_lstm(rng, input_dim, hidden, f"{name}.fw"),
        init_lstm(rng, input_dim, hidden, f"{name}.bw"),
    )


def zero_bilstm(input_dim: int, hidden: int) -> BiLstmParams:
    def one():
        return LstmParams(
            parameter(np.zeros((input_dim, 4 * hidden))),
            parameter(np.zeros((hidden, 4 * hidden))),
            parameter(np.zeros(4 * hidden)),
        )

    return BiLstmParams(one(), one())


def _lengths_from_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    lengths = mask.sum(axis=1)
    if np.any(lengths == 0):
        raise ValueError("empty sequence")
    prefix = np.arange(mask.shape[1])[None, :] < lengths[:, None]
    if not np.array_equal(prefix, mask):
        raise ValueError("mask must be true on a prefix of each sequence")
    return lengths


def bilstm(x, mask, params: BiLstmParams, dropout: float = 0.0, train: bool = False, rng=None):
    """Batched BiLSTM over (B, T, D) with a prefix mask.

    Returns ``(states, final_fw, final_bw)``: states (B, T, 2H) zeroed past
    each length, the forward state at the last valid step and the backward
    state at step 0. Dropout hits the output states only.
    """
    x = ops.as_node(x)
    if x.value.ndim != 3 or x.shape[1] == 0:
        raise ValueError(f"bilstm: empty sequence or bad shape {x.shape}")
    lengths = _lengths_from_mask(mask)
    rev = ops.reverse_padded(x, lengths)
    both = ops.lstm_stack(
        [x, rev], [params.fw.W, params.bw.W], [params.fw.U, params.bw.U], [params.fw.b, params.bw.b]
    )
    fw = ops.index(both, 0)
    bw = ops.reverse_padded(ops.index(both, 1), lengths)
    m = np.asarray(mask, dtype=np.float64)[:, :, None]
    states = ops.mul(ops.concat([fw, bw], axis=-1), m)
    states = ops.dropout(states, dropout, train, rng)
    H = params.hidden
    last = lengths - 1
    final_fw = ops.pick(ops.slice_last(states, 0, H), last)
    final_bw = ops.pick(ops.slice_last(states, H, 2 * H), np.zeros_like(last))
    return states, final_fw, final_bw


def bilstm_forward(seq, params: BiLstmParams, dropout: float = 0.0, train: bool = False, rng=None):
    """Single (T, D) sequence; returns ``(states (T, 2H), final_fw (H,), final_bw (H,))`` as nodes."""
    seq = ops.as_node(seq)
    if seq.value.ndim != 2 or seq.shape[0] == 0:
        raise ValueError("bilstm_forward: empty sequence")
    x = ops.reshape(seq, (1,) + seq.shape)
    states, ffw, fbw = bilstm(x, np.ones((1, seq.shape[0]), bool), params, dropout, train, rng)
    return ops.reshape(states, states.shape[1:]), ops.reshape(ffw, (-1,)), ops.reshape(fbw, (-1,))


def encode_query(token_ids, embeddings: Node, query_lstm: BiLstmParams, dropout=0.0, train=False, rng=None) -> Node:
    """h^T = [final forward ; final backward] hidden state, shape (B, 2H_q).

    ``token_ids`` is (B, L) padded with PAD_ID, or a single 1-D query.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None, :]
    mask = ids != PAD_ID
    if np.any(mask.sum(axis=1) == 0):
        raise ValueError("encode_query: query has no non-PAD tokens")
    lengths = mask.sum(axis=1)
    mask = np.arange(ids.shape[1])[None, :] < lengths[:, None]
    keep = int(lengths.max())
    emb = ops.embed(embeddings, ids[:, :keep])
    _, ffw, fbw = bilstm(emb, mask[:, :keep], query_lstm, dropout, train, rng)
    hT = ops.concat([ffw, fbw], axis=-1)
    return ops.reshape(hT, (-1,)) if single else hT


def encode_video(features, mask=None, use_video_lstm: bool = True, video_lstm: BiLstmParams | None = None,
                 dropout=0.0, train=False, rng=None) -> Node:
    """Per-frame context h^V: BiLSTM states, or the raw features unchanged when the video LSTM is off."""
    feats = ops.as_node(features)
    single = feats.value.ndim == 2
    if feats.value.ndim not in (2, 3) or feats.shape[-2] == 0:
        raise ValueError("encode_video: empty sequence")
    if not use_video_lstm:
        return feats
    x = ops.reshape(feats, (1,) + feats.shape) if single else feats
    if mask is None:
        mask = np.ones(x.shape[:2], dtype=bool)
    states, _, _ = bilstm(x, mask, video_lstm, dropout, train, rng)
    return ops.reshape(states, states.shape[1:]) if single else states
