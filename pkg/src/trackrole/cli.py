"""Command-line entry point: ``python3 -m trackrole <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from .config import ConfigError, RunConfig, load_config
from .dsp import LogMelSpectrogram
from .evaluation import confusion, metrics, metrics_csv, render_confusion_svg
from .features import audio_inputs, clip_features, symbolic_inputs
from .midi_io import MidiError, TrackRole, read_midi_file
from .models.audio import AudioClassifier
from .models.symbolic import SymbolicClassifier
from .models.training import (DomainError, evaluate_model, predict, pretrain_auxiliary,
                              pretrain_masked, train)
from .nn import checkpoint
from .nn.checkpoint import CheckpointError
from .nn.optim import LrSchedule, NumericError
from .synth import WAVEFORMS, WavError, preset_for_program, read_wav, render, write_wav
from .tokenizer import encode

logger = logging.getLogger("trackrole")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DATA_ERRORS = (MidiError, WavError, ds.DatasetError, CheckpointError, DomainError, OSError)
WAV_MANIFEST = "manifest.csv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers

def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_manifest(path: Path, entries: dict) -> None:
    lines = [f"{k} = {v}" for k, v in entries.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _mel_kwargs(cfg: RunConfig) -> dict:
    return dict(n_fft=cfg.n_fft, hop=cfg.hop, n_mels=cfg.n_mels, fmin=cfg.fmin, fmax=cfg.fmax)


def build_model(domain: str, cfg: RunConfig, seed: int):
    if domain == "symbolic":
        return SymbolicClassifier(cfg.symbolic_model(), seed=seed)
    return AudioClassifier(cfg.audio_model(), seed=seed)


def model_name(domain: str, cfg: RunConfig) -> str:
    if domain == "symbolic":
        return f"symbolic-L{cfg.n_layers}"
    return "audio-aff" if cfg.use_aff else "audio"


def load_examples(cfg: RunConfig) -> list:
    if not cfg.data_dir:
        raise ds.DatasetError("config has no data_dir")
    examples = ds.load_corpus(cfg.data_dir)
    if cfg.balance_per_class is not None:
        examples = ds.balance(examples, cfg.balance_per_class, cfg.split_seed)
    return examples


def _wav_features(cfg: RunConfig, ids):
    audio_dir = Path(cfg.audio_dir)
    out = []
    for i in ids:
        path = audio_dir / f"{i}.wav"
        out.append(clip_features(read_wav(path.read_bytes()), cfg.max_frames, **_mel_kwargs(cfg)))
    return out


def featurize(domain: str, cfg: RunConfig, examples):
    if domain == "symbolic":
        return symbolic_inputs(examples, cfg.max_len)
    labels = np.array([int(ex.role) for ex in examples], dtype=np.int64)
    if cfg.audio_dir:
        # rendered files cover ingested examples; augmented variants are re-rendered
        plain = [ex for ex in examples if ex.origin != "augmented"]
        feats = dict(zip((ex.id for ex in plain), _wav_features(cfg, [ex.id for ex in plain])))
        rest = [ex for ex in examples if ex.id not in feats]
        feats.update(zip((ex.id for ex in rest),
                         audio_inputs(rest, cfg.dataset_seed, cfg.max_frames, **_mel_kwargs(cfg))[0]))
        return [feats[ex.id] for ex in examples], labels
    return audio_inputs(examples, cfg.dataset_seed, cfg.max_frames, **_mel_kwargs(cfg))


def prepare_splits(cfg: RunConfig):
    examples = load_examples(cfg)
    manifest = ds.split(examples, cfg.split_seed)
    parts = {name: ds.select(examples, ids) for name, ids in
             (("train", manifest.train_ids), ("val", manifest.val_ids), ("test", manifest.test_ids))}
    return examples, manifest, parts


def pretraining_corpus(cfg: RunConfig) -> list:
    per_class = math.ceil(cfg.pretrain_corpus_size / len(TrackRole))
    corpus = ds.synthesize_corpus(per_class, cfg.pretrain_seed)
    order = np.random.default_rng(cfg.pretrain_seed).permutation(len(corpus))
    return [corpus[i] for i in sorted(order[:cfg.pretrain_corpus_size])]


def waveform_label(example, dataset_seed: int) -> int:
    return WAVEFORMS.index(preset_for_program(example.sequence.program, dataset_seed).waveform)


def _config_entries(cfg: RunConfig) -> dict:
    return {f"config.{k}": v for k, v in cfg.to_dict().items()}


# ------------------------------------------------------------------ subcommands

def cmd_synth_data(args) -> int:
    examples = ds.synthesize_corpus(args.per_class, args.seed)
    out = Path(args.out)
    ds.write_corpus(examples, out)
    _write_manifest(out / "build_manifest.txt", {
        "command": "synth-data", "per_class": args.per_class, "seed": args.seed,
        "n_examples": len(examples), "dataset_hash": ds.corpus_hash(examples)})
    print(f"wrote {len(examples)} sequences to {out}")
    return EXIT_OK


def cmd_render_audio(args) -> int:
    examples = ds.load_corpus(args.inp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["file,role,program,seed"]
    for ex in examples:
        name = f"{ex.id}.wav"
        (out / name).write_bytes(write_wav(render(ex.sequence, args.seed)))
        lines.append(f"{name},{ex.role.key},{ex.sequence.program},{args.seed}")
    (out / WAV_MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"rendered {len(examples)} clips to {out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    corpus = pretraining_corpus(cfg)
    model = build_model(args.domain, cfg, cfg.seed)
    if args.domain == "symbolic":
        tokens = [encode(ex.sequence, cfg.max_len) for ex in corpus]
        state, losses = pretrain_masked(model, tokens, cfg.pretrain_steps, cfg.pretrain_seed,
                                        cfg.pretrain_batch_size, cfg.pretrain_peak_lr)
        objective = "masked-pitch"
    else:
        feats, _ = audio_inputs(corpus, cfg.dataset_seed, cfg.max_frames, **_mel_kwargs(cfg))
        labels = [waveform_label(ex, cfg.dataset_seed) for ex in corpus]
        state, losses = pretrain_auxiliary(model, feats, labels, len(WAVEFORMS), cfg.pretrain_steps,
                                           cfg.pretrain_seed, cfg.pretrain_batch_size, cfg.pretrain_peak_lr)
        objective = "preset-waveform"
    meta = {"domain": args.domain, "kind": "pretrain", "objective": objective, "config": cfg.to_dict(),
            "corpus_hash": ds.corpus_hash(corpus),
            "loss_first": losses[0] if losses else None, "loss_last": losses[-1] if losses else None}
    blob = checkpoint.dumps(state, meta)
    Path(args.out).write_bytes(blob)
    entries = {"command": "pretrain", "domain": args.domain, "objective": objective,
               "corpus_size": len(corpus), "corpus_hash": meta["corpus_hash"],
               "steps": cfg.pretrain_steps, "peak_lr": cfg.pretrain_peak_lr, **_config_entries(cfg),
               "loss_first": f"{losses[0]:.6f}" if losses else "none",
               "loss_last": f"{losses[-1]:.6f}" if losses else "none", "checkpoint_sha256": _sha256(blob)}
    _write_manifest(Path(str(args.out) + ".manifest.txt"), entries)
    print(f"pretrained {args.domain} for {cfg.pretrain_steps} steps; loss "
          f"{entries['loss_first']} -> {entries['loss_last']}")
    return EXIT_OK


def cmd_train(args) -> int:
    mode = args.mode.replace("-", "_")
    if mode == "fine_tune" and not args.init:
        raise UsageError("train: --mode fine-tune requires --init CKPT")
    cfg = load_config(args.config)
    examples, manifest, parts = prepare_splits(cfg)
    train_set = parts["train"]
    if cfg.augmentation == "default":
        train_set = ds.augment_set(train_set, seed=cfg.augmentation_seed)
    model = build_model(args.domain, cfg, cfg.seed)
    tc = cfg.train_config(mode, args.init)
    splits = {"train": featurize(args.domain, cfg, train_set), "val": featurize(args.domain, cfg, parts["val"])}
    total = tc.steps_for(len(train_set))
    schedule = LrSchedule(total_steps=max(total, 1), peak=tc.peak_lr,
                          warmup_steps=math.floor(tc.warmup_fraction * max(total, 1)))
    result = train(model, splits, tc, schedule)
    init_hash = _sha256(Path(args.init).read_bytes()) if args.init else "none"
    meta = {"domain": args.domain, "kind": "classifier", "mode": mode, "config": cfg.to_dict(),
            "dataset_hash": ds.corpus_hash(examples), "split_hash": _sha256(manifest.to_text().encode()),
            "init_sha256": init_hash, "best_epoch": result.best_epoch}
    blob = checkpoint.dumps(model.state_dict(), meta)
    out = Path(args.out)
    out.write_bytes(blob)
    Path(str(out) + ".history.csv").write_text(result.history_csv(), encoding="utf-8")
    Path(str(out) + ".split.txt").write_text(manifest.to_text(), encoding="utf-8")
    _write_manifest(Path(str(out) + ".manifest.txt"), {
        "command": "train", "domain": args.domain, "mode": mode, "init_sha256": init_hash,
        "dataset_hash": meta["dataset_hash"], "split_hash": meta["split_hash"],
        "n_train": len(train_set), "n_val": len(parts["val"]), "n_test": len(parts["test"]),
        "schedule.total_steps": schedule.total_steps, "schedule.warmup_steps": schedule.warmup_steps,
        "schedule.peak_lr": schedule.peak, **_config_entries(cfg),
        "best_epoch": result.best_epoch, "steps": result.steps, "checkpoint_sha256": _sha256(blob)})
    last_val = [h for h in result.history if h.split == "val"]
    print(f"trained {model_name(args.domain, cfg)} ({mode}) for {result.steps} steps; "
          f"best val accuracy {max((h.accuracy for h in last_val), default=float('nan')):.4f}")
    return EXIT_OK


def _load_classifier(path):
    state, meta = checkpoint.load(path)
    if meta.get("kind") != "classifier":
        raise CheckpointError(f"{path} is not a trained classifier checkpoint")
    cfg = RunConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in meta["config"].items()})
    model = build_model(meta["domain"], cfg, cfg.seed)
    checkpoint.check_manifest(state, model.state_dict())
    model.load_state_dict(state)
    model.eval()
    return model, cfg, meta


def cmd_evaluate(args) -> int:
    model, cfg, meta = _load_classifier(args.ckpt)
    domain = meta["domain"]
    examples, manifest, parts = prepare_splits(cfg)
    data_hash = ds.corpus_hash(examples)
    if data_hash != meta["dataset_hash"]:
        raise ds.DatasetError("dataset differs from the one the checkpoint was trained on")
    x, y = featurize(domain, cfg, parts[args.split])
    _, acc, preds = evaluate_model(model, x, y, max(cfg.batch_size, 16))
    cm = confusion(y, preds)
    report = metrics(cm)
    out = Path(args.report)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv([(model_name(domain, cfg), meta["mode"], report)]),
                                     encoding="utf-8")
    (out / "per_class.csv").write_text(report.per_class_csv(), encoding="utf-8")
    (out / "confusion.svg").write_text(
        render_confusion_svg(cm, normalize_rows=True, title=f"{model_name(domain, cfg)} ({meta['mode']})"),
        encoding="utf-8")
    (out / "confusion_counts.svg").write_text(render_confusion_svg(cm, normalize_rows=False), encoding="utf-8")
    _write_manifest(out / "manifest.txt", {
        "command": "evaluate", "split": args.split, "n_examples": len(y),
        "checkpoint_sha256": _sha256(Path(args.ckpt).read_bytes()), "domain": domain, "mode": meta["mode"],
        "dataset_hash": data_hash, "split_hash": _sha256(manifest.to_text().encode()),
        **_config_entries(cfg), "accuracy": f"{report.accuracy:.6f}"})
    print(f"{args.split} accuracy {report.accuracy:.4f} over {len(y)} examples; report in {out}")
    return EXIT_OK


def format_prediction(role: TrackRole, probs) -> str:
    return f"{role.key} p=[{','.join(f'{p:.6f}' for p in probs)}]"


def cmd_predict(args) -> int:
    model, cfg, meta = _load_classifier(args.ckpt)
    path = Path(args.input)
    suffix = path.suffix.lower()
    if suffix in (".mid", ".midi"):
        features = encode(read_midi_file(path), cfg.max_len)
    elif suffix == ".wav":
        features = clip_features(read_wav(path.read_bytes()), cfg.max_frames, **_mel_kwargs(cfg))
    else:
        raise UsageError(f"predict: unsupported input type {suffix!r} (expected .mid or .wav)")
    role, probs = predict(model, features)
    print(format_prediction(role, probs))
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trackrole", description="Track-role classification of single-instrument music.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", help="generate a labeled synthetic SMF corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("render-audio", help="render a corpus to 48 kHz WAVs")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_render_audio)

    p = sub.add_parser("pretrain", help="pretrain an encoder/backbone")
    p.add_argument("--domain", choices=("symbolic", "audio"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train a role classifier")
    p.add_argument("--domain", choices=("symbolic", "audio"), required=True)
    p.add_argument("--mode", choices=("fine-tune", "from-scratch"), required=True)
    p.add_argument("--init")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a classifier on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="predict the role of one .mid or .wav file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
