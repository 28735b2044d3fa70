"""Feature files, annotation records, padded minibatches and synthetic tasks.

Feature file layout (all little-endian)::

    offset 0   8 bytes  magic b"EXCLFEAT"
    offset 8   u32      version (1)
    offset 12  u32      T (frames)
    offset 16  u32      D (feature dim)
    offset 20  T*D      float32, row-major
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import Rng
from .encoders import PAD_ID, UNK_ID, Vocabulary, tokenize
from .inference import seconds_to_frames
from .objectives import SpanTarget

MAGIC = b"EXCLFEAT"
VERSION = 1
_HEADER = struct.Struct("<8sIII")


class FeatureFileError(ValueError):
    pass


def write_feature_file(path, features) -> None:
    x = np.asarray(features)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"features must be a non-empty T x D matrix, got shape {x.shape}")
    payload = np.ascontiguousarray(x, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, x.shape[0], x.shape[1]))
        fh.write(payload)


def read_feature_file(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FeatureFileError(f"{path}: truncated header at offset {len(raw)} (need {_HEADER.size} bytes)")
    magic, version, T, D = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FeatureFileError(f"{path}: bad magic at offset 0: {magic!r}")
    if version != VERSION:
        raise FeatureFileError(f"{path}: unsupported version {version} at offset 8")
    if T < 1 or D < 1:
        raise FeatureFileError(f"{path}: empty shape {T}x{D} at offset 12")
    need = _HEADER.size + 4 * T * D
    if len(raw) != need:
        raise FeatureFileError(
            f"{path}: payload length mismatch at offset {min(len(raw), need)}: "
            f"expected {need} bytes, file has {len(raw)}"
        )
    return np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(T, D).astype(np.float32)


@dataclass
class AnnotationRecord:
    video_id: str
    start_sec: float
    end_sec: float
    query: str
    id: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {"id": self.id, "video_id": self.video_id, "start_sec": self.start_sec,
             "end_sec": self.end_sec, "query": self.query}
        )


def read_annotations(path) -> list[AnnotationRecord]:
    """Records in file order. Spans with end < start or empty queries are skipped with one warning."""
    records, skipped = [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                vid = str(obj["video_id"])
                s, e = float(obj["start_sec"]), float(obj["end_sec"])
                query = str(obj["query"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: cannot parse annotation ({exc})") from exc
            if e < s or s < 0 or not query.strip():
                skipped += 1
                continue
            rid = str(obj.get("id") or f"{vid}:{lineno}")
            records.append(AnnotationRecord(vid, s, e, query, rid))
    if skipped:
        warnings.warn(f"{path}: skipped {skipped} malformed annotation(s)", stacklevel=2)
    return records


def write_annotations(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


@dataclass
class Batch:
    features: np.ndarray  # (B, T_max, D), zero padded
    frame_mask: np.ndarray  # (B, T_max) bool, prefix-true
    token_ids: np.ndarray  # (B, L_max), PAD padded
    token_mask: np.ndarray
    targets: list
    ids: list = field(default_factory=list)
    fps: float = 5.0

    @property
    def lengths(self) -> np.ndarray:
        return self.frame_mask.sum(axis=1)

    @property
    def durations(self) -> np.ndarray:
        return self.lengths / self.fps

    def __len__(self):
        return self.features.shape[0]


def _collate(items, vocab: Vocabulary, fps: float) -> Batch:
    B = len(items)
    T = max(f.shape[0] for _, f in items)
    D = items[0][1].shape[1]
    toks = []
    for rec, _ in items:
        ids = vocab.encode(tokenize(rec.query)) or [UNK_ID]
        toks.append(ids)
    L = max(len(t) for t in toks)
    feats = np.zeros((B, T, D))
    fmask = np.zeros((B, T), dtype=bool)
    tids = np.full((B, L), PAD_ID, dtype=np.int64)
    targets = []
    for i, ((rec, f), ids) in enumerate(zip(items, toks)):
        n = f.shape[0]
        if f.shape[1] != D:
            raise ValueError(f"feature dim mismatch for video {rec.video_id}: {f.shape[1]} vs {D}")
        feats[i, :n] = f
        fmask[i, :n] = True
        tids[i, : len(ids)] = ids
        duration = n / fps
        s_sec = min(max(rec.start_sec, 0.0), duration)
        e_sec = min(max(rec.end_sec, s_sec), duration)
        s_idx, e_idx = seconds_to_frames(rec.start_sec, rec.end_sec, fps, n)
        targets.append(SpanTarget(s_sec, e_sec, s_idx, e_idx))
    return Batch(feats, fmask, tids, tids != PAD_ID, targets, [rec.id for rec, _ in items], fps)


def make_batches(records, features_by_id, vocab: Vocabulary, batch_size: int = 32,
                 shuffle_rng: Rng | None = None, fps: float = 5.0) -> list[Batch]:
    """Zero-padded batches; order is shuffled when ``shuffle_rng`` is given. The last partial batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    missing = sorted({r.video_id for r in records if r.video_id not in features_by_id})
    if missing:
        raise KeyError(f"no features for video ids: {', '.join(missing)}")
    order = np.arange(len(records)) if shuffle_rng is None else shuffle_rng.permutation(len(records))
    batches = []
    for lo in range(0, len(records), batch_size):
        chunk = [records[i] for i in order[lo : lo + batch_size]]
        batches.append(_collate([(r, np.asarray(features_by_id[r.video_id])) for r in chunk], vocab, fps))
    return batches


SYNTH_MODES = ("pattern", "temporal-context")
CLASS_WORDS = ("cooking", "jumping", "reading", "running", "sitting", "singing", "washing", "writing")


@dataclass
class SynthConfig:
    mode: str = "pattern"
    num_classes: int = 8
    t_min: int = 20
    t_max: int = 200
    feature_dim: int = 32
    sigma: float = 1.0
    span_min: float = 0.1
    span_max: float = 0.4
    num_items: int = 2500
    fps: float = 5.0
    amplitude: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in SYNTH_MODES:
            raise ValueError(f"mode must be one of {SYNTH_MODES}, got {self.mode!r}")
        if self.t_min < 4 or self.t_max < self.t_min:
            raise ValueError("need 4 <= t_min <= t_max")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if not 0.0 < self.span_min <= self.span_max <= 1.0:
            raise ValueError("need 0 < span_min <= span_max <= 1")
        if self.feature_dim < 1 or self.sigma < 0 or self.num_items < 0:
            raise ValueError("feature_dim >= 1, sigma >= 0 and num_items >= 0 required")


@dataclass
class SyntheticDataset:
    records: list
    features: dict
    classes: list
    patterns: np.ndarray
    marker: np.ndarray | None = None


def class_word(k: int) -> str:
    return CLASS_WORDS[k] if k < len(CLASS_WORDS) else f"activity{k}"


def _unit_vectors(rng: Rng, n: int, dim: int) -> np.ndarray:
    v = rng.normal(size=(n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def generate_synthetic(cfg: SynthConfig) -> SyntheticDataset:
    """Synthetic moment-localization data.

    ``pattern``: the class vector is added on every frame of the span.
    ``temporal-context``: the class vector marks only the span's first frame
    and the span covers ``1 + m`` frames, where ``m`` is the number of marker
    frames scattered anywhere after the start. The end frame itself carries
    no signal, so finding it means counting over the sequence. A few extra
    markers before the start are not counted.
    """
    rng = Rng(cfg.seed)
    patterns = _unit_vectors(rng, cfg.num_classes, cfg.feature_dim)
    marker = _unit_vectors(rng, 1, cfg.feature_dim)[0] if cfg.mode == "temporal-context" else None
    records, features, classes = [], {}, []
    width = len(str(max(cfg.num_items - 1, 0)))
    for i in range(cfg.num_items):
        T = int(rng.integers(cfg.t_min, cfg.t_max + 1))
        frac = rng.uniform(cfg.span_min, cfg.span_max)
        k = int(rng.integers(0, cfg.num_classes))
        x = rng.normal(0.0, cfg.sigma, size=(T, cfg.feature_dim)) if cfg.sigma > 0 else np.zeros((T, cfg.feature_dim))
        if cfg.mode == "pattern":
            L = int(min(T, max(1, round(frac * T))))
            s = int(rng.integers(0, T - L + 1))
            e = s + L - 1
            x[s : e + 1] += cfg.amplitude * patterns[k]
        else:
            # span length = 1 + number of marker frames after the start
            c = int(min(T - 1, max(1, round(frac * T) - 1)))
            s = int(rng.integers(0, T - c))
            e = s + c
            x[s] += cfg.amplitude * patterns[k]
            marks = rng.choice(np.arange(s + 1, T), size=c, replace=False)
            x[marks] += cfg.amplitude * marker
            if s > 0:
                early = rng.choice(np.arange(0, s), size=min(s, int(rng.integers(0, 3))), replace=False)
                x[early] += cfg.amplitude * marker
        vid = f"synth{i:0{width}d}"
        features[vid] = x.astype(np.float32)
        records.append(AnnotationRecord(vid, s / cfg.fps, (e + 1) / cfg.fps, f"person is {class_word(k)}", vid))
        classes.append(k)
    return SyntheticDataset(records, features, classes, patterns, marker)


def split_records(records, rng: Rng, fractions=(0.8, 0.1, 0.1)):
    """Seeded shuffle, then contiguous train/val/test slices."""
    n = len(records)
    order = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))

    def pick(idx):
        return [records[i] for i in sorted(idx)]

    return pick(order[:n_train]), pick(order[n_train : n_train + n_val]), pick(order[n_train + n_val :])


def export_dataset(out_dir, data: SyntheticDataset, splits: dict) -> None:
    """Write one feature file per video under ``features/`` plus ``<split>.jsonl`` annotations."""
    out = Path(out_dir)
    feat_dir = out / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    for vid, x in data.features.items():
        write_feature_file(feat_dir / f"{vid}.feat", x)
    for name, recs in splits.items():
        write_annotations(out / f"{name}.jsonl", recs)


def load_features(feature_dir, video_ids) -> dict:
    d = Path(feature_dir)
    missing = sorted(v for v in set(video_ids) if not (d / f"{v}.feat").exists())
    if missing:
        raise KeyError(f"no feature files for video ids: {', '.join(missing)}")
    return {v: read_feature_file(d / f"{v}.feat") for v in sorted(set(video_ids))}
