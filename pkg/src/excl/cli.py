"""Command-line entry point: ``excl train | eval | predict | score | synth | gradcheck``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure. Every failure prints exactly one line on stderr of the
form ``excl: <kind> error: <message>``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

from .datapipe import (
    FeatureFileError,
    SynthConfig,
    export_dataset,
    generate_synthetic,
    load_features,
    read_annotations,
    split_records,
)
from .diffcore import NonFiniteError, Rng
from .inference import EvalConfig, emit_results_table, read_predictions, recall_at_1, write_predictions
from .model import ConfigError, RunConfig
from .train import CheckpointError, TrainingDiverged, load_checkpoint, metrics_row, predict_records, train
from .verify import TOLERANCE, gradcheck_all

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int):
        super().__init__(message)
        self.kind, self.code = kind, code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message, EXIT_USAGE)


def _thresholds(text: str) -> tuple:
    try:
        return EvalConfig(tuple(float(t) for t in text.split(","))).thresholds
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _variant(text: str) -> tuple[int, str]:
    parts = text.split("-")
    if len(parts) != 2 or parts[0] not in ("1", "2") or parts[1] not in ("a", "b", "c"):
        raise argparse.ArgumentTypeError(f"variant must look like 2-b (1|2 then a|b|c), got {text!r}")
    return int(parts[0]), parts[1]


def _seed_override(cfg_dict: dict) -> dict:
    raw = os.environ.get("EXCL_SEED")
    if raw is not None:
        try:
            cfg_dict["seed"] = int(raw)
        except ValueError:
            raise ConfigError(f"EXCL_SEED must be an integer, got {raw!r}") from None
    return cfg_dict


def _load_data(ann_path, feature_dir):
    records = read_annotations(ann_path)
    if not records:
        raise ValueError(f"{ann_path}: no usable annotations")
    return records, load_features(feature_dir, [r.video_id for r in records])


def _load_model(path, features):
    ckpt = load_checkpoint(path)
    dims = {int(x.shape[1]) for x in features.values()}
    if dims != {ckpt.model.feature_dim}:
        raise CheckpointError(
            f"{path}: checkpoint expects feature dim {ckpt.model.feature_dim}, data has {sorted(dims)}"
        )
    return ckpt.model


def cmd_train(args) -> int:
    if args.config:
        cfg_dict = RunConfig.from_file(args.config).to_dict()
    else:
        cfg_dict = RunConfig().to_dict()
    if args.objective:
        cfg_dict["objective"] = args.objective
    if args.variant:
        cfg_dict["video_lstm"], cfg_dict["predictor"] = args.variant
    cfg = RunConfig.from_dict(_seed_override(cfg_dict))
    tr, feats_tr = _load_data(args.train_ann, args.features)
    va, feats_va = _load_data(args.val_ann, args.features)
    feats = {**feats_tr, **feats_va}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    t0 = time.perf_counter()
    result = train(cfg, tr, va, feats, out_dir=out)
    print(json.dumps({
        "label": cfg.label,
        "best_epoch": result.best_epoch,
        "best_val_r1_iou0.5": result.best_metric,
        "epochs_run": len(result.history) - 1,
        "seconds": round(time.perf_counter() - t0, 1),
        "checkpoint": str(out / "best.ckpt"),
    }))
    return EXIT_OK


def _evaluate(args):
    records, feats = _load_data(args.ann, args.features)
    model = _load_model(args.checkpoint, feats)
    preds = predict_records(model, records, feats)
    cfg = EvalConfig(args.thresholds, model.cfg.fps)
    metrics = recall_at_1(preds, [(r.start_sec, r.end_sec) for r in records], cfg)
    return model, records, preds, metrics


def _report(label, metrics, dataset, thresholds, out):
    table = emit_results_table([metrics_row(label, metrics, dataset)], [dataset], thresholds)
    blob = json.dumps({"label": label, "dataset": dataset,
                       "recall_at_1": {f"{t:g}": v for t, v in metrics.items()}}, sort_keys=True)
    sys.stdout.write(table)
    print(blob)
    if out:
        Path(out).write_text(blob + "\n")


def cmd_eval(args) -> int:
    model, records, _, metrics = _evaluate(args)
    _report(model.label, metrics, Path(args.ann).stem, args.thresholds, args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    records, feats = _load_data(args.ann, args.features)
    model = _load_model(args.checkpoint, feats)
    preds = predict_records(model, records, feats)
    write_predictions(args.out, [(r.id, s, e) for r, (s, e) in zip(records, preds)])
    return EXIT_OK


def cmd_score(args) -> int:
    records = read_annotations(args.ann)
    preds = read_predictions(args.pred)
    missing = [r.id for r in records if r.id not in preds]
    if missing:
        raise KeyError(f"no prediction for {len(missing)} record(s), first: {missing[0]}")
    metrics = recall_at_1([preds[r.id] for r in records], [(r.start_sec, r.end_sec) for r in records],
                          EvalConfig(args.thresholds))
    _report(args.label, metrics, Path(args.ann).stem, args.thresholds, args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    d = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: not a JSON object ({exc})") from exc
        known = {f.name for f in dataclasses.fields(SynthConfig)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown synth config key(s): {', '.join(unknown)}")
    d = _seed_override(d)
    try:
        cfg = SynthConfig(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    data = generate_synthetic(cfg)
    tr, va, te = split_records(data.records, Rng(cfg.seed).spawn(7))
    export_dataset(args.out, data, {"train": tr, "val": va, "test": te})
    print(json.dumps({"out": str(args.out), "train": len(tr), "val": len(va), "test": len(te)}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    rows = gradcheck_all(eps=args.eps)
    width = max(len(r["variant"]) for r in rows)
    for r in rows:
        status = "ok" if r["ok"] else "FAIL"
        print(f"{r['variant']:<{width}}  max_rel_error={r['max_rel_error']:.3e}  {status}")
    n_bad = sum(not r["ok"] for r in rows)
    print(f"{len(rows) - n_bad}/{len(rows)} variants below {TOLERANCE:g} in {time.perf_counter() - t0:.1f}s")
    if n_bad:
        raise CliError("numeric", f"{n_bad} variant(s) exceed gradient tolerance {TOLERANCE:g}", EXIT_NUMERIC)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="excl", description="Extractive moment localization in untrimmed videos.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    default_th = "0.3,0.5,0.7"

    t = sub.add_parser("train", help="train a model with early stopping")
    t.add_argument("--config", help="flat JSON file of RunConfig fields")
    t.add_argument("--objective", choices=("clf", "reg"))
    t.add_argument("--variant", type=_variant, help="video-lstm flag and predictor, e.g. 2-b")
    t.add_argument("--train-ann", required=True)
    t.add_argument("--val-ann", required=True)
    t.add_argument("--features", required=True, help="directory of <video_id>.feat files")
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    for name, fn, helptext in (("eval", cmd_eval, "Recall@1 table for a checkpoint"),
                               ("predict", cmd_predict, "write span predictions as JSON lines")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--ann", required=True)
        s.add_argument("--features", required=True)
        if name == "eval":
            s.add_argument("--thresholds", type=_thresholds, default=_thresholds(default_th))
            s.add_argument("--out", help="also write the JSON metrics here")
        else:
            s.add_argument("--out", required=True)
        s.set_defaults(fn=fn)

    s = sub.add_parser("score", help="Recall@1 of a predictions file against annotations")
    s.add_argument("--pred", required=True)
    s.add_argument("--ann", required=True)
    s.add_argument("--thresholds", type=_thresholds, default=_thresholds(default_th))
    s.add_argument("--label", default="predictions")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_score)

    s = sub.add_parser("synth", help="generate a synthetic dataset with 80/10/10 splits")
    s.add_argument("--config", help="flat JSON file of SynthConfig fields")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("gradcheck", help="finite-difference check of all 12 model variants")
    s.add_argument("--eps", type=float, default=1e-4)
    s.set_defaults(fn=cmd_gradcheck)
    return p


def _classify(exc: BaseException) -> CliError:
    if isinstance(exc, CliError):
        return exc
    if isinstance(exc, ConfigError):
        return CliError("config", str(exc), EXIT_USAGE)
    if isinstance(exc, (TrainingDiverged, NonFiniteError, FloatingPointError)):
        return CliError("numeric", str(exc), EXIT_NUMERIC)
    if isinstance(exc, KeyError):
        return CliError("data", str(exc.args[0]) if exc.args else "missing key", EXIT_DATA)
    if isinstance(exc, (CheckpointError, FeatureFileError, OSError, ValueError)):
        return CliError("data", str(exc), EXIT_DATA)
    raise exc


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.fn(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:
        err = _classify(exc)
        msg = " ".join(str(err).split())
        print(f"excl: {err.kind} error: {msg}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
