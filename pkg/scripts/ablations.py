"""Ablation studies on a prepared data set.

Studies (pick with --study, default all):

* ``layers``    NGCF with 1..4 propagation layers
* ``variants``  ngcf / gcmc / pinsage / svdpp / mf at 3 layers where applicable
* ``dropout``   message dropout and node dropout grids, one at a time
* ``sparsity``  per-group test recall/ndcg of NGCF-3 and MF

Every run writes ``<out>/<study>/<name>/curve.csv`` and ``test_report.{json,csv}``;
each study also writes a summary CSV. Example::

    ngcf prepare data/ml-100k.tsv --out runs/ml100k/data
    python scripts/ablations.py --data runs/ml100k/data --out runs/ml100k/ablations --max-epochs 100
"""
from __future__ import annotations

import argparse
import csv
from pathlib import Path

from ngcf.dataset import InteractionDataset
from ngcf.evaluation import evaluate_model
from ngcf.graph import laplacian_for
from ngcf.model import ModelConfig
from ngcf.training import TrainConfig, fit, new_model, write_curve

DROPOUT_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)


def study_runs(study: str, dim: int):
    full = (dim,) * 3
    if study == "layers":
        return {f"ngcf-{L}": ModelConfig(embed_dim=dim, layer_dims=(dim,) * L) for L in (1, 2, 3, 4)}
    if study == "variants":
        return {
            v: ModelConfig(variant=v, embed_dim=dim, layer_dims=full) for v in ("ngcf", "gcmc", "pinsage", "svdpp", "mf")
        }
    if study == "dropout":
        runs = {f"msg-{p}": ModelConfig(embed_dim=dim, layer_dims=full, msg_dropout=p) for p in DROPOUT_GRID}
        runs |= {f"node-{p}": ModelConfig(embed_dim=dim, layer_dims=full, msg_dropout=0.0, node_dropout=p)
                 for p in DROPOUT_GRID}
        return runs
    if study == "sparsity":
        return {"ngcf-3": ModelConfig(embed_dim=dim, layer_dims=full), "mf": ModelConfig(variant="mf", embed_dim=dim)}
    raise ValueError(study)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--data", type=Path, required=True, help="directory written by 'ngcf prepare'")
    ap.add_argument("--out", type=Path, default=Path("runs/ablations"))
    ap.add_argument("--study", choices=("layers", "variants", "dropout", "sparsity", "all"), default="all")
    ap.add_argument("--embed-dim", type=int, default=64)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--l2", type=float, default=1e-5)
    ap.add_argument("--max-epochs", type=int, default=400)
    ap.add_argument("--patience", type=int, default=50)
    ap.add_argument("--seed", type=int, default=2019)
    args = ap.parse_args()

    ds = InteractionDataset.load(args.data)
    lap = laplacian_for(ds)
    train_cfg = TrainConfig(lr=args.lr, l2=args.l2, max_epochs=args.max_epochs, patience=args.patience,
                            seed=args.seed, deterministic=True)
    studies = ("layers", "variants", "dropout", "sparsity") if args.study == "all" else (args.study,)
    for study in studies:
        summary = []
        for name, model_cfg in study_runs(study, args.embed_dim).items():
            run_dir = args.out / study / name
            run_dir.mkdir(parents=True, exist_ok=True)
            res = fit(new_model(ds, model_cfg, args.seed), ds, lap, model_cfg, train_cfg)
            write_curve(res.curve, run_dir / "curve.csv")
            report = evaluate_model(res.best.params, lap, model_cfg, ds, (20,), "test")
            report.write_json(run_dir / "test_report.json")
            report.write_csv(run_dir / "test_report.csv")
            if study == "sparsity":
                for row in report.csv_rows():
                    summary.append({"run": name, **row})
            else:
                summary.append({"run": name, "best_epoch": res.best_epoch, "recall@20": report.recall(20),
                                "ndcg@20": report.ndcg(20)})
            print(study, name, f"recall@20 {report.recall(20):.4f} ndcg@20 {report.ndcg(20):.4f}", flush=True)
        with open(args.out / study / "summary.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(summary[0]))
            writer.writeheader()
            writer.writerows(summary)


if __name__ == "__main__":
    main()
