"""Command-line entry point.

Commands: synth, train, eval, lexicon build|apply, explain, gradcheck, report.
Exit codes: 0 success, 1 verification failure, 2 config error, 3 data error,
4 empty result. Every command is deterministic given --seed; wall-clock
timings go to stdout only, never into report files, so reruns with the same
seed produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import features as feat
from . import training
from .errors import (
    CheckpointError,
    CogbertError,
    ConfigError,
    DataError,
    EmptyResultError,
    ValidationError,
)
from .explain import build_report, accumulate_attention, lime_explain
from .explain import DEFAULT_KERNEL_WIDTH, DEFAULT_RIDGE_LAMBDA, DEFAULT_SAMPLES
from .model import (
    MODES,
    Batch,
    EncoderParams,
    ModelConfig,
    build_batch,
    encoder_forward,
    load_checkpoint,
    random_params,
    save_checkpoint,
)
from .numerics import softmax_rows
from .numerics.gradcheck import grad_check_report
from .numerics import autodiff as ad
from .tokenizer import Vocab, build_vocab, encode

GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_MAX_ENTRIES = 48


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _load_json_config(path: str | None, what: str) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} config file {path} does not exist")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} config {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{what} config {path} must hold a JSON object")
    return obj


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} file {path} does not exist")
    return p


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg_dict = _load_json_config(args.config, "generator")
    if args.n_sentences is not None:
        cfg_dict["n_sentences"] = args.n_sentences
    if args.distractors is not None:
        cfg_dict["distractors"] = args.distractors
    try:
        cfg = feat.SynthConfig(**cfg_dict)
    except TypeError as exc:
        raise ConfigError(f"invalid generator config: {exc}") from exc

    if args.print_config:
        print(json.dumps(cfg.to_dict(), sort_keys=True, indent=2))
        return 0

    out = _out_dir(args.out)
    measurements, db, labels = feat.synth_generate(cfg, args.seed)
    feat.save_measurements(measurements, out / "corpus.jsonl")
    db.save_jsonl(out / "features.jsonl")
    print(f"wrote {len(measurements)} sentences over {cfg.n_classes} classes to {out}")
    print(f"labels: {sorted(set(labels))}")
    return 0


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------

def _build_model_config(cfg_dict: dict, mode: str, vocab: Vocab, db: feat.FeatureDb) -> ModelConfig:
    labels = [db.get(sid).label for sid in db.ids()]
    channels = len(db.get(db.ids()[0]).sentence_eeg)
    derived = {
        "vocab_size": vocab.size,
        "n_classes": max(labels) + 1,
        "eeg_channels": channels,
        "mode": mode,
    }
    merged = {**cfg_dict, **derived}
    try:
        return ModelConfig(**merged)
    except TypeError as exc:
        raise ConfigError(f"invalid model config: {exc}") from exc


def _build_train_config(args) -> training.TrainConfig:
    cfg_dict = _load_json_config(args.train_config, "train")
    if args.robustness:
        cfg_dict["repeats"] = training.ROBUSTNESS_REPEATS
        cfg_dict["epochs"] = training.ROBUSTNESS_EPOCHS
        cfg_dict["init_source"] = "random"
    if args.repeats is not None:
        cfg_dict["repeats"] = args.repeats
    if args.epochs is not None:
        cfg_dict["epochs"] = args.epochs
    cfg_dict["seed"] = args.seed
    try:
        return training.TrainConfig(**cfg_dict)
    except TypeError as exc:
        raise ConfigError(f"invalid train config: {exc}") from exc


def _report_csv(path: Path, mode: str, report: training.RunReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "run", "seed", "precision", "recall", "f1", "f1_std", "accuracy"])
        for i, run in enumerate(report.runs):
            m = run.metrics
            writer.writerow([
                mode, i, run.seed,
                f"{m.precision:.4f}", f"{m.recall:.4f}", f"{m.f1:.4f}", "",
                f"{m.accuracy:.4f}",
            ])
        writer.writerow([
            mode, "mean", report.train_config["seed"],
            f"{report.precision:.4f}", f"{report.recall:.4f}", f"{report.f1:.4f}",
            f"{report.f1_std:.4f}", f"{report.accuracy:.4f}",
        ])


def cmd_train(args) -> int:
    db = feat.FeatureDb.load_jsonl(_require_file(args.features, "feature db"))
    if len(db) < 2:
        raise DataError("feature db holds fewer than 2 sentences")
    vocab = build_vocab([db.get(sid).tokens for sid in db.ids()])
    model_cfg = _build_model_config(_load_json_config(args.config, "model"), args.mode, vocab, db)
    train_cfg = _build_train_config(args)

    if args.print_config:
        print(json.dumps({"model": model_cfg.to_dict(), "train": train_cfg.to_dict()},
                         sort_keys=True, indent=2))
        return 0

    out = _out_dir(args.out)
    examples = training.make_examples(db, vocab, model_cfg.max_len)
    train_ex, test_ex = training.split(examples, args.split_ratio, train_cfg.seed)
    print(f"training mode={model_cfg.mode} on {len(train_ex)} sentences, "
          f"testing on {len(test_ex)}, repeats={train_cfg.repeats}")

    started = time.perf_counter()
    report, run_params = training.repeat_runs(
        train_cfg.repeats, train_cfg, model_cfg, train_ex, test_ex, db)
    elapsed = time.perf_counter() - started

    _write_json(out / "report.json", report.to_dict())
    _report_csv(out / "report.csv", model_cfg.mode, report)
    vocab.save(out / "vocab.tsv")
    best = training.best_run_index(report)
    save_checkpoint(run_params[best], out / "model.ckpt")

    print(f"mean precision={report.precision:.4f} recall={report.recall:.4f} "
          f"f1={report.f1:.4f} (std {report.f1_std:.4f}) accuracy={report.accuracy:.4f}")
    print(f"best run: {best} (accuracy {report.runs[best].metrics.accuracy:.4f})")
    print(f"wall clock: {elapsed:.1f}s")
    return 0


def cmd_eval(args) -> int:
    db = feat.FeatureDb.load_jsonl(_require_file(args.features, "feature db"))
    params = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    vocab = Vocab.load(_require_file(args.vocab, "vocab"))
    cfg = params.cfg

    out = _out_dir(args.out)
    examples = training.make_examples(db, vocab, cfg.max_len)
    if args.split_ratio is not None:
        _, examples = training.split(examples, args.split_ratio, args.seed)
    metrics = training.evaluate(params, examples, db)
    result = {
        "model_config": cfg.to_dict(),
        "n_sentences": len(examples),
        "metrics": metrics.to_dict(),
    }
    _write_json(out / "eval.json", result)
    print(f"evaluated {len(examples)} sentences: precision={metrics.precision:.4f} "
          f"recall={metrics.recall:.4f} f1={metrics.f1:.4f} accuracy={metrics.accuracy:.4f}")
    return 0


# ---------------------------------------------------------------------------
# lexicon
# ---------------------------------------------------------------------------

def cmd_lexicon(args) -> int:
    if args.action == "build":
        measurements = feat.load_measurements(_require_file(args.corpus, "corpus"))
        lexicon = feat.build_lexicon(measurements)
        if len(lexicon) == 0:
            raise EmptyResultError("no fixated word occurrences; lexicon is empty")
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        lexicon.save_jsonl(out)
        print(f"lexicon contains {len(lexicon)} words -> {out}")
        return 0

    # apply: replace each record's sentence EEG with the lexicon average
    lexicon = feat.EEGLexicon.load_jsonl(_require_file(args.lexicon, "lexicon"))
    if len(lexicon) == 0:
        raise EmptyResultError("lexicon file holds no entries")
    db = feat.FeatureDb.load_jsonl(_require_file(args.features, "feature db"))
    n_channels = len(next(iter(lexicon.vectors.values())))
    records = []
    coverages = {}
    for sid in db.ids():
        rec = db.get(sid)
        vec, coverage = feat.lexicon_sentence_eeg(rec.tokens, lexicon, n_channels)
        coverages[sid] = coverage
        if coverage == 0.0:
            print(f"warning: no lexicon coverage for {sid}; zero vector substituted")
        records.append(feat.CognitiveRecord(
            sentence_id=rec.sentence_id,
            tokens=rec.tokens,
            label=rec.label,
            n_fixations=rec.n_fixations,
            eye_tokens=rec.eye_tokens,
            eeg_tokens=rec.eeg_tokens,
            sentence_eeg=vec,
        ))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    feat.FeatureDb(records).save_jsonl(out)
    mean_coverage = float(np.mean(list(coverages.values())))
    _write_json(Path(str(out) + ".coverage.json"),
                {"mean_coverage": mean_coverage, "per_sentence": coverages})
    print(f"applied lexicon to {len(records)} sentences "
          f"(mean coverage {mean_coverage:.3f}) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# explain
# ---------------------------------------------------------------------------

def _predicted_class_prob(params: EncoderParams, batch: Batch, class_idx: int) -> float:
    result = encoder_forward(params, batch, train=False)
    probs = softmax_rows(result.logits.value)
    return float(probs[0, class_idx])


def cmd_explain(args) -> int:
    db = feat.FeatureDb.load_jsonl(_require_file(args.features, "feature db"))
    params = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    vocab = Vocab.load(_require_file(args.vocab, "vocab"))
    cfg = params.cfg
    out = _out_dir(args.out)

    sentence_ids = [sid.strip() for sid in args.ids.split(",") if sid.strip()]
    if not sentence_ids:
        raise ConfigError("--ids must name at least one sentence")

    overlaps = []
    for sid in sentence_ids:
        rec = db.get(sid)
        layout = encode(rec.tokens, vocab, cfg.max_len)
        words = rec.tokens[: layout.word_count]
        batch = build_batch([layout], cfg, [sid], db, labels=[rec.label])
        result = encoder_forward(params, batch, train=False)
        predicted = int(result.predictions()[0])

        attn_scores = accumulate_attention(result.traces[0], layout, words)

        def predict_fn(kept_words: list[str], keep_mask: np.ndarray) -> float:
            idx = np.flatnonzero(keep_mask)
            sub = feat.CognitiveRecord(
                sentence_id=sid,
                tokens=[words[i] for i in idx],
                label=rec.label,
                n_fixations=rec.n_fixations[idx],
                eye_tokens=rec.eye_tokens[idx],
                eeg_tokens=rec.eeg_tokens[idx],
                sentence_eeg=rec.sentence_eeg,
            )
            sub_layout = encode(sub.tokens, vocab, cfg.max_len)
            sub_batch = build_batch([sub_layout], cfg, [sid], feat.FeatureDb([sub]))
            return _predicted_class_prob(params, sub_batch, predicted)

        lime_scores = lime_explain(
            predict_fn, words,
            n_samples=args.n_samples,
            kernel_width=args.kernel_width,
            ridge_lambda=args.ridge_lambda,
            seed=args.seed,
        )
        report = build_report(sid, predicted, attn_scores, lime_scores, layout, k=args.k)
        overlaps.append(report.overlap)

        _write_json(out / f"explain_{sid}.json", report.to_dict())
        with open(out / f"heatmap_{sid}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["word", "attention_score", "lime_weight"])
            for word, attn, lime in report.heatmap_rows():
                writer.writerow([word, repr(attn), repr(lime)])
        print(f"{sid}: predicted class {predicted}, overlap@{args.k} = {report.overlap:.2f}")

    _write_json(out / "explain_summary.json", {
        "k": args.k,
        "sentences": sentence_ids,
        "overlaps": overlaps,
        "mean_overlap": float(np.mean(overlaps)),
    })
    print(f"mean overlap@{args.k} over {len(overlaps)} sentences: {np.mean(overlaps):.3f}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def _gradcheck_batch(cfg: ModelConfig, seed: int) -> Batch:
    """Two short sentences exercising every feature path, deterministic."""
    from .numerics.rng import SeededRng
    from .tokenizer import encode as _encode

    rng = SeededRng(seed).derive("gradcheck-data")
    word_ids = [f"w{i}" for i in range(6)]
    vocab = build_vocab([word_ids])
    sentences = [word_ids[:5], word_ids[2:6]]
    records = []
    for i, words in enumerate(sentences):
        n = len(words)
        records.append(feat.CognitiveRecord(
            sentence_id=f"g{i}",
            tokens=words,
            label=i % cfg.n_classes,
            n_fixations=[0, 1, 2, 3, 2][:n],
            eye_tokens=rng.integers(0, 101, size=n),
            eeg_tokens=rng.integers(0, 101, size=n),
            sentence_eeg=rng.normal(0.0, 1.0, size=cfg.eeg_channels),
        ))
    db = feat.FeatureDb(records)
    layouts = [_encode(r.tokens, vocab, cfg.max_len) for r in records]
    return build_batch(layouts, cfg, [r.sentence_id for r in records], db,
                       labels=[r.label for r in records])


def gradcheck_mode(mode: str, seed: int = 0, layers: int = 2, heads: int = 2,
                   d_model: int = 16, d_ff: int = 32, max_len: int = 16,
                   max_entries: int | None = GRADCHECK_MAX_ENTRIES) -> dict[str, float]:
    """Finite-difference report for one augmentation mode (dropout forced 0).

    Parameters are redrawn at O(0.3) magnitude: at the tiny training init
    the attention is near-uniform and true gradients shrink toward the
    central-difference noise floor, which would measure the probe rather
    than the backward pass.
    """
    from .numerics.rng import SeededRng

    cfg = ModelConfig(
        vocab_size=110, n_classes=4, layers=layers, heads=heads, d_model=d_model,
        d_ff=d_ff, max_len=max_len, eeg_channels=4, dropout=0.0, mode=mode,
    )
    batch = _gradcheck_batch(cfg, seed)
    params = random_params(cfg, seed)
    prng = SeededRng(seed).derive("gradcheck-point")
    for p in params.all():
        if p.name.endswith(".gamma"):
            p.value[:] = prng.normal(1.0, 0.2, p.value.shape)
        else:
            p.value[:] = prng.normal(0.0, 0.3, p.value.shape)

    def loss_fn():
        result = encoder_forward(params, batch, train=False)
        return ad.cross_entropy_mean(result.logits, batch.labels)

    return grad_check_report(loss_fn, params.all(), eps=1e-5,
                             max_entries_per_param=max_entries)


def cmd_gradcheck(args) -> int:
    if args.layers > 2 or args.d_model > 32:
        raise ConfigError("gradcheck enforces a tiny config: layers <= 2, d_model <= 32")
    modes = MODES if args.mode == "all" else (args.mode,)
    failures = []
    results = {}
    for mode in modes:
        report = gradcheck_mode(mode, seed=args.seed, layers=args.layers,
                                d_model=args.d_model)
        worst = max(report.values())
        results[mode] = worst
        bad = sorted(n for n, e in report.items() if e >= GRADCHECK_TOLERANCE)
        status = "ok" if not bad else "FAIL"
        print(f"{mode:16s} worst relative error {worst:.3e}  {status}")
        if bad:
            failures.append((mode, bad))
    if args.out:
        out = _out_dir(args.out)
        _write_json(out / "gradcheck.json", {
            "tolerance": GRADCHECK_TOLERANCE,
            "worst_error_per_mode": results,
        })
    if failures:
        for mode, bad in failures:
            print(f"{mode}: tensors above tolerance: {', '.join(bad)}")
        return 1
    return 0


# ---------------------------------------------------------------------------
# report aggregation
# ---------------------------------------------------------------------------

def cmd_report(args) -> int:
    rows = []
    for path in args.inputs:
        obj = json.loads(_require_file(path, "report").read_text(encoding="utf-8"))
        try:
            rows.append([
                obj["model_config"]["mode"],
                obj["train_config"]["repeats"],
                obj["train_config"]["epochs"],
                obj["train_config"]["seed"],
                f"{obj['mean']['precision']:.4f}",
                f"{obj['mean']['recall']:.4f}",
                f"{obj['mean']['f1']:.4f}",
                f"{obj['f1_std']:.4f}",
                f"{obj['mean']['accuracy']:.4f}",
            ])
        except KeyError as exc:
            raise DataError(f"{path} is not a run report (missing {exc})") from exc
    if not rows:
        raise EmptyResultError("no reports to aggregate")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "repeats", "epochs", "seed",
                         "precision", "recall", "f1", "f1_std", "accuracy"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cogbert",
        description="Cognitively-augmented encoder experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-keyword corpus + feature db")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="generator config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-sentences", type=int, default=None)
    p.add_argument("--distractors", type=int, default=None)
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="run the repeated fine-tuning protocol")
    p.add_argument("--features", required=True, help="feature db JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="model config JSON")
    p.add_argument("--train-config", help="train config JSON")
    p.add_argument("--mode", choices=MODES, default="none")
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.add_argument("--robustness", action="store_true",
                   help="random init, 5 repeats, 10 epochs")
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-ratio", type=float, default=None,
                   help="evaluate only the held-out share of this split")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("lexicon", help="build or apply a word-EEG lexicon")
    p.add_argument("action", choices=("build", "apply"))
    p.add_argument("--corpus", help="raw corpus JSONL (build)")
    p.add_argument("--lexicon", help="lexicon JSONL (apply)")
    p.add_argument("--features", help="feature db JSONL (apply)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_lexicon)

    p = sub.add_parser("explain", help="attention + LIME explanations")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--ids", required=True, help="comma-separated sentence ids")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--n-samples", type=int, default=DEFAULT_SAMPLES)
    p.add_argument("--kernel-width", type=float, default=DEFAULT_KERNEL_WIDTH)
    p.add_argument("--ridge-lambda", type=float, default=DEFAULT_RIDGE_LAMBDA)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("gradcheck", help="finite-difference check of every mode")
    p.add_argument("--mode", choices=MODES + ("all",), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--d-model", type=int, default=16)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("report", help="aggregate run reports into one CSV")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "lexicon":
        if args.action == "build" and not args.corpus:
            print("error: lexicon build requires --corpus", file=sys.stderr)
            return 2
        if args.action == "apply" and not (args.lexicon and args.features):
            print("error: lexicon apply requires --lexicon and --features", file=sys.stderr)
            return 2
    try:
        return args.fn(args)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EmptyResultError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except CogbertError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
