"""Fine-tuned vs from-scratch test accuracy at an equal step budget.

Pretrains one encoder/backbone (masked pitch for symbolic, preset-waveform
classification for audio), then trains both modes for each seed on a small
labeled corpus and writes a metrics CSV plus a per-seed table.

    python3 scripts/finetune_vs_scratch.py --domain symbolic --per-class 30 --epochs 4
"""
import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from trackrole import dataset as ds
from trackrole.cli import build_model, featurize, model_name, pretraining_corpus, waveform_label
from trackrole.config import RunConfig, load_config
from trackrole.evaluation import confusion, metrics, metrics_csv
from trackrole.models.training import evaluate_model, pretrain_auxiliary, pretrain_masked, train
from trackrole.nn import checkpoint
from trackrole.synth import WAVEFORMS
from trackrole.tokenizer import encode


def pretrain(domain: str, cfg: RunConfig, out: Path) -> Path:
    corpus = pretraining_corpus(cfg)
    model = build_model(domain, cfg, cfg.seed)
    if domain == "symbolic":
        tokens = [encode(ex.sequence, cfg.max_len) for ex in corpus]
        state, losses = pretrain_masked(model, tokens, cfg.pretrain_steps, cfg.pretrain_seed,
                                        cfg.pretrain_batch_size, cfg.pretrain_peak_lr)
    else:
        feats, _ = featurize("audio", cfg, corpus)
        labels = [waveform_label(ex, cfg.dataset_seed) for ex in corpus]
        state, losses = pretrain_auxiliary(model, feats, labels, len(WAVEFORMS), cfg.pretrain_steps,
                                           cfg.pretrain_seed, cfg.pretrain_batch_size, cfg.pretrain_peak_lr)
    print(f"pretrained on {len(corpus)} sequences: loss {losses[0]:.3f} -> {np.mean(losses[-20:]):.3f}",
          flush=True)
    path = out / f"{domain}-pretrained.ckpt"
    checkpoint.save(path, state, {"domain": domain, "kind": "pretrain"})
    return path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--domain", choices=("symbolic", "audio"), default="symbolic")
    parser.add_argument("--config", help="RunConfig file (defaults: desk settings below)")
    parser.add_argument("--per-class", type=int, default=30)
    parser.add_argument("--epochs", type=int, default=4)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--out", default="runs/finetune_vs_scratch")
    args = parser.parse_args(argv)

    base = load_config(args.config) if args.config else RunConfig(max_len=256, peak_lr=1e-3)
    base = dataclasses.replace(base, epochs=args.epochs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = pretrain(args.domain, base, out)

    corpus = ds.synthesize_corpus(args.per_class, seed=0)
    manifest = ds.split(corpus, base.split_seed)
    data = {name: featurize(args.domain, base, ds.select(corpus, ids))
            for name, ids in (("train", manifest.train_ids), ("val", manifest.val_ids),
                              ("test", manifest.test_ids))}
    rows, table = [], ["seed,fine_tune,from_scratch"]
    for seed in args.seeds:
        cfg = dataclasses.replace(base, seed=seed)
        accs = []
        for mode in ("fine_tune", "from_scratch"):
            start = time.perf_counter()
            model = build_model(args.domain, cfg, seed)
            train(model, {"train": data["train"], "val": data["val"]},
                  cfg.train_config(mode, str(ckpt) if mode == "fine_tune" else None))
            _, acc, preds = evaluate_model(model, *data["test"])
            rows.append((f"{model_name(args.domain, cfg)}-s{seed}", mode, metrics(confusion(data["test"][1], preds))))
            accs.append(acc)
            print(f"seed {seed} {mode}: test accuracy {acc:.4f} ({time.perf_counter() - start:.0f}s)", flush=True)
        table.append(f"{seed},{accs[0]:.4f},{accs[1]:.4f}")
    (out / f"{args.domain}-metrics.csv").write_text(metrics_csv(rows), encoding="utf-8")
    (out / f"{args.domain}-table.csv").write_text("\n".join(table) + "\n", encoding="utf-8")
    print("\n".join(table))
    return 0


if __name__ == "__main__":
    sys.exit(main())
