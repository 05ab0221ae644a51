"""Validation-recall grid search behind the desk experiment's settings.

Each configuration is a JSON object of ModelConfig/TrainConfig overrides; the
script trains it on the 10-core MovieLens-100K split and prints the best
validation recall@20, the test recall@20 at that epoch and the best epoch.
Selection must use the validation column only.

    python scripts/tune_desk.py --variant ngcf \
        '{"reg_mode": "batch-embeddings", "l2": 1e-2, "lr": 5e-3, "node_dropout": 0.3}' ...

With no configurations it runs the grid recorded in GRID for the variant.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from desk_experiment import SEED, load_data  # noqa: E402
from ngcf.graph import laplacian_for  # noqa: E402
from ngcf.model import ModelConfig  # noqa: E402
from ngcf.training import TrainConfig, fit, new_model  # noqa: E402

BE = "batch-embeddings"
# every point actually run for the shipped selection
GRID = {
    "mf": [
        {"reg_mode": BE, "lr": lr, "l2": l2}
        for lr, l2 in ((1e-3, 1e-3), (1e-3, 1e-2), (1e-3, 1e-1), (5e-4, 1e-2), (5e-3, 1e-2), (5e-3, 1e-3))
    ],
    "ngcf": [
        {"reg_mode": BE, "lr": 1e-3, "l2": 1e-3},
        {"reg_mode": BE, "lr": 1e-3, "l2": 1e-2},
        {"reg_mode": BE, "lr": 1e-3, "l2": 1e-1},
        {"reg_mode": BE, "lr": 5e-3, "l2": 1e-3},
        {"reg_mode": BE, "lr": 1e-3, "l2": 1e-2, "node_dropout": 0.3},
        {"reg_mode": BE, "lr": 5e-3, "l2": 1e-2},
        *({"reg_mode": BE, "lr": 5e-3, "l2": 1e-2, "node_dropout": p} for p in (0.1, 0.2, 0.3, 0.4, 0.5)),
        {"reg_mode": BE, "lr": 5e-3, "l2": 1e-2, "msg_dropout": 0.3},
        {"reg_mode": BE, "lr": 5e-3, "l2": 1e-2, "msg_dropout": 0.0, "node_dropout": 0.2},
    ],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("configs", nargs="*", help="JSON override objects")
    ap.add_argument("--variant", default="ngcf")
    ap.add_argument("--raw", type=Path, default=Path("data/ml-100k.tsv"))
    ap.add_argument("--max-epochs", type=int, default=300)
    ap.add_argument("--patience", type=int, default=50)
    args = ap.parse_args()

    ds, label = load_data(args.raw if args.raw.is_file() else None)
    lap = laplacian_for(ds)
    print(label, ds.stats(), flush=True)
    configs = [json.loads(c) for c in args.configs] or GRID[args.variant]
    for overrides in configs:
        model_kw = {k: v for k, v in overrides.items() if k in ModelConfig.__dataclass_fields__}
        train_kw = {k: v for k, v in overrides.items() if k not in model_kw}
        layers = () if args.variant == "mf" else (64, 64, 64)
        model_cfg = ModelConfig(variant=args.variant, embed_dim=64, layer_dims=layers, **model_kw)
        train_cfg = TrainConfig(max_epochs=args.max_epochs, patience=args.patience, track_test=True, seed=SEED,
                                **train_kw)
        start = time.perf_counter()
        res = fit(new_model(ds, model_cfg, SEED), ds, lap, model_cfg, train_cfg)
        row = res.curve[res.best_epoch - 1]
        print(json.dumps({"variant": args.variant, **overrides, "best_epoch": res.best_epoch,
                          "val_recall@20": round(res.best_val_recall, 4),
                          "test_recall@20": round(row["test_recall@20"], 4),
                          "epochs_run": res.epochs_run, "seconds": round(time.perf_counter() - start)}), flush=True)


if __name__ == "__main__":
    main()
