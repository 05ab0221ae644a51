"""Full-scale NGCF-3 run on Gowalla (optional, takes many hours single-threaded).

Expects the public grouped-format files (one line per user: ``user item item ...``)
concatenated or as a single check-in edge list. Steps::

    python scripts/reproduce_gowalla.py --raw path/to/gowalla_interactions.txt --format grouped

It prepares a 10-core split, trains NGCF with 64-dim embeddings, three 64-wide
layers, lr 1e-4, L2 1e-5, batch 1024, message dropout 0.1, node dropout 0.1,
and prints test recall@20 / ndcg@20 next to the reference targets
(0.1569 and 0.1327, tolerance 0.008 each). Split randomness and the
hyperparameter grid mean a miss of a few thousandths is not by itself a bug.
"""
from __future__ import annotations

import argparse
import json
import subprocess
import sys
from pathlib import Path

TARGETS = {"test_recall@20": 0.1569, "test_ndcg@20": 0.1327}
TOL = 0.008


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--raw", type=Path, required=True)
    ap.add_argument("--format", choices=("edge-list", "grouped"), default="grouped")
    ap.add_argument("--out", type=Path, default=Path("runs/gowalla"))
    ap.add_argument("--max-epochs", type=int, default=400)
    args = ap.parse_args()

    data = args.out / "data"
    ngcf = [sys.executable, "-m", "ngcf"]
    if not (data / "stats.json").is_file():
        subprocess.run([*ngcf, "prepare", str(args.raw), "--out", str(data), "--k-core", "10",
                        "--format", args.format], check=True)
    proc = subprocess.run(
        [*ngcf, "-v", "train", "--data", str(data), "--out", str(args.out / "ngcf3"),
         "--variant", "ngcf", "--embed-dim", "64", "--layers", "3", "--lr", "1e-4", "--l2", "1e-5",
         "--batch-size", "1024", "--msg-dropout", "0.1", "--node-dropout", "0.1",
         "--max-epochs", str(args.max_epochs), "--patience", "50"],
        check=True, capture_output=True, text=True,
    )
    summary = json.loads(proc.stdout.strip().splitlines()[-1])
    ok = True
    for key, target in TARGETS.items():
        got = summary[key]
        hit = abs(got - target) <= TOL
        ok &= hit
        print(f"{key}: {got:.4f} (target {target} +/- {TOL}) {'PASS' if hit else 'FAIL'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
