"""Audio model with and without attention feature fusion, several seeds.

    python3 scripts/aff_ablation.py --per-class 120 --epochs 10 --seeds 0 1 2
"""
import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from trackrole import dataset as ds
from trackrole.cli import build_model, featurize, model_name
from trackrole.config import RunConfig
from trackrole.evaluation import confusion, metrics, metrics_csv
from trackrole.models.training import evaluate_model, train


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--per-class", type=int, default=120)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--out", default="runs/aff_ablation")
    args = parser.parse_args(argv)

    base = RunConfig(peak_lr=1e-3, epochs=args.epochs)
    corpus = ds.synthesize_corpus(args.per_class, seed=0)
    manifest = ds.split(corpus, base.split_seed)
    data = {name: featurize("audio", base, ds.select(corpus, ids))
            for name, ids in (("train", manifest.train_ids), ("val", manifest.val_ids),
                              ("test", manifest.test_ids))}
    rows, accs = [], {False: [], True: []}
    for use_aff in (False, True):
        for seed in args.seeds:
            cfg = dataclasses.replace(base, use_aff=use_aff, seed=seed)
            start = time.perf_counter()
            model = build_model("audio", cfg, seed)
            train(model, {"train": data["train"], "val": data["val"]}, cfg.train_config("from_scratch"))
            _, acc, preds = evaluate_model(model, *data["test"])
            accs[use_aff].append(acc)
            rows.append((f"{model_name('audio', cfg)}-s{seed}", "from_scratch",
                         metrics(confusion(data["test"][1], preds))))
            print(f"{model_name('audio', cfg)} seed {seed}: {acc:.4f} ({time.perf_counter() - start:.0f}s)",
                  flush=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(rows), encoding="utf-8")
    print(f"mean test accuracy: no fusion {np.mean(accs[False]):.4f}, fusion {np.mean(accs[True]):.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
