"""Generate a MovieLens-100K-sized synthetic implicit-feedback edge list.

Users and items get latent taste vectors plus a long-tailed popularity term;
each user draws a heavy-tailed number of distinct items from a softmax over
affinities. Deliberately structured so that collaborative models have signal.

    python scripts/make_synthetic.py --out data/synthetic-100k.tsv
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np


def generate(n_users=943, n_items=1682, n_interactions=100_000, dim=8, seed=0):
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(n_users, dim))
    V = rng.normal(size=(n_items, dim))
    popularity = rng.gumbel(size=n_items) * 1.2
    activity = rng.lognormal(mean=0.0, sigma=0.9, size=n_users)
    per_user = np.maximum(20, np.round(activity / activity.sum() * n_interactions)).astype(int)
    per_user = np.minimum(per_user, n_items // 2)
    pairs = []
    for u in range(n_users):
        logits = U[u] @ V.T / np.sqrt(dim) * 2.0 + popularity
        # Gumbel top-k is sampling without replacement from softmax(logits)
        keys = logits + rng.gumbel(size=n_items)
        items = np.argpartition(-keys, per_user[u])[: per_user[u]]
        pairs.extend((u, int(i)) for i in items)
    return pairs


def write(pairs, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"u{u}\ti{i}\n" for u, i in pairs)
    return path


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="data/synthetic-100k.tsv")
    ap.add_argument("--users", type=int, default=943)
    ap.add_argument("--items", type=int, default=1682)
    ap.add_argument("--interactions", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    pairs = generate(args.users, args.items, args.interactions, seed=args.seed)
    print(f"wrote {len(pairs)} interactions to {write(pairs, args.out)}")


if __name__ == "__main__":
    main()
