"""Full-ranking top-K evaluation (recall@K, ndcg@K) and user sparsity groups."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import InteractionDataset
from .model import final_embeddings
from .numeric import check_finite

log = logging.getLogger(__name__)

DEFAULT_KS = (20,)


def recall_at_k(topk, test_items) -> float:
    test = set(int(t) for t in test_items)
    if not test:
        raise ValueError("recall is undefined for an empty test set")
    return sum(1 for i in topk if int(i) in test) / len(test)


def ndcg_at_k(topk, test_items) -> float:
    test = set(int(t) for t in test_items)
    if not test:
        raise ValueError("ndcg is undefined for an empty test set")
    dcg = sum(1.0 / math.log2(r + 2) for r, i in enumerate(topk) if int(i) in test)
    idcg = sum(1.0 / math.log2(r + 2) for r in range(min(len(topk), len(test))))
    return dcg / idcg if idcg > 0 else 0.0


def _excluded(ds: InteractionDataset, u: int, split: str, exclude_validation: bool) -> np.ndarray:
    if split == "test" and exclude_validation:
        return np.concatenate([ds.train[u], ds.validation[u]])
    return ds.train[u]


def _targets(ds: InteractionDataset, split: str):
    if split not in ("test", "validation"):
        raise ValueError("split must be 'test' or 'validation'")
    return ds.test if split == "test" else ds.validation


def topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Row-wise indices of the ``k`` largest scores; ties go to the lower index."""
    n_rows, n_cols = scores.shape
    k = min(k, n_cols)
    vals = -scores
    if k == n_cols or n_cols <= 4 * k:
        return np.argsort(vals, axis=1, kind="stable")[:, :k]
    part = np.argpartition(vals, k - 1, axis=1)[:, :k]
    thresh = np.take_along_axis(vals, part, axis=1).max(axis=1, keepdims=True)
    below = vals < thresh
    need = k - below.sum(axis=1, keepdims=True)
    at = vals == thresh
    chosen = below | (at & (np.cumsum(at, axis=1) <= need))
    idx = np.nonzero(chosen)[1].reshape(n_rows, k)  # ascending item index per row
    order = np.argsort(np.take_along_axis(vals, idx, axis=1), axis=1, kind="stable")
    return np.take_along_axis(idx, order, axis=1)


def _masked_scores(estar, ds, users, split, exclude_validation) -> np.ndarray:
    scores = estar[users] @ estar[ds.n_users :].T
    for row, u in enumerate(users):
        scores[row, _excluded(ds, int(u), split, exclude_validation)] = -np.inf
    return scores


def rank_items(
    estar: np.ndarray,
    ds: InteractionDataset,
    u: int,
    k: int = 20,
    split: str = "test",
    exclude_validation: bool = True,
) -> np.ndarray:
    """Top-``k`` scoreable items for user ``u`` (train, and optionally validation, items excluded)."""
    scores = _masked_scores(estar, ds, np.array([u]), split, exclude_validation)
    n_scoreable = int(np.isfinite(scores).sum())
    return topk_indices(scores, k)[0][: min(k, n_scoreable)]


@dataclass
class SparsityGroups:
    users: np.ndarray  # evaluated users, ascending by train count then index
    group_of: np.ndarray  # group id per entry of ``users``
    boundaries: list[int]  # max train-interaction count inside each group
    sizes: list[int]


def sparsity_groups(ds: InteractionDataset, users: np.ndarray | None = None, n_groups: int = 4) -> SparsityGroups:
    """Split users into contiguous bins of near-equal total train interactions.

    Users are swept in ascending order of train count; a user lands in the
    first bin whose cumulative target ``total * (b + 1) / n_groups`` is not
    exceeded by the running sum after that user. Empty bins are dropped.
    """
    if users is None:
        users = np.flatnonzero([len(t) > 0 for t in ds.test])
    users = np.asarray(users, dtype=np.int64)
    counts = np.array([len(ds.train[u]) for u in users], dtype=np.int64)
    order = np.lexsort((users, counts))
    users, counts = users[order], counts[order]
    total = int(counts.sum())
    if total == 0:
        return SparsityGroups(users, np.zeros(len(users), np.int64), [0] if len(users) else [], [len(users)] if len(users) else [])
    cum = np.cumsum(counts)
    # exact integer form of ceil(n_groups * cum / total) - 1
    raw_bin = np.minimum(-(-(n_groups * cum) // total) - 1, n_groups - 1)
    present = np.unique(raw_bin)
    if len(present) < n_groups:
        log.warning("sparsity groups: %d empty bin(s) merged away", n_groups - len(present))
    group_of = np.searchsorted(present, raw_bin)
    boundaries = [int(counts[group_of == g].max()) for g in range(len(present))]
    sizes = [int((group_of == g).sum()) for g in range(len(present))]
    return SparsityGroups(users, group_of, boundaries, sizes)


@dataclass
class GroupReport:
    max_interactions: int
    n_users: int
    metrics: dict[str, dict[int, float]]


@dataclass
class EvalReport:
    k_values: list[int]
    metrics: dict[str, dict[int, float]]
    n_users: int
    split: str = "test"
    groups: list[GroupReport] = field(default_factory=list)

    def recall(self, k: int = 20) -> float:
        return self.metrics["recall"][k]

    def ndcg(self, k: int = 20) -> float:
        return self.metrics["ndcg"][k]

    def to_dict(self) -> dict:
        def m(d):
            return {name: {str(k): v for k, v in per_k.items()} for name, per_k in d.items()}

        return {
            "split": self.split,
            "k_values": list(self.k_values),
            "n_users": self.n_users,
            "metrics": m(self.metrics),
            "groups": [
                {"max_interactions": g.max_interactions, "n_users": g.n_users, "metrics": m(g.metrics)} for g in self.groups
            ],
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def csv_rows(self) -> list[dict]:
        rows = []
        for k in self.k_values:
            rows.append({"group": "all", "max_interactions": "", "n_users": self.n_users, "k": k,
                         "recall": self.metrics["recall"][k], "ndcg": self.metrics["ndcg"][k]})
            for g_idx, g in enumerate(self.groups):
                rows.append({"group": g_idx, "max_interactions": g.max_interactions, "n_users": g.n_users, "k": k,
                             "recall": g.metrics["recall"][k], "ndcg": g.metrics["ndcg"][k]})
        return rows

    def write_csv(self, path: str | Path) -> None:
        rows = self.csv_rows()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["group"])
            writer.writeheader()
            writer.writerows(rows)


def per_user_metrics(
    estar: np.ndarray,
    ds: InteractionDataset,
    ks=DEFAULT_KS,
    split: str = "test",
    exclude_validation: bool = True,
    users: np.ndarray | None = None,
    chunk: int = 1024,
) -> tuple[np.ndarray, dict[str, dict[int, np.ndarray]]]:
    """Recall/ndcg per user for every ``k``; users default to those with targets."""
    check_finite(estar, "final embeddings")
    targets = _targets(ds, split)
    if users is None:
        users = np.flatnonzero([len(t) > 0 for t in targets])
    users = np.asarray(users, dtype=np.int64)
    ks = sorted(set(int(k) for k in ks))
    k_max = max(ks)
    discounts = 1.0 / np.log2(np.arange(2, k_max + 2))
    cum_disc = np.cumsum(discounts)
    out = {"recall": {k: np.zeros(len(users)) for k in ks}, "ndcg": {k: np.zeros(len(users)) for k in ks}}
    for start in range(0, len(users), chunk):
        batch = users[start : start + chunk]
        scores = _masked_scores(estar, ds, batch, split, exclude_validation)
        top = topk_indices(scores, k_max)
        is_target = np.zeros(scores.shape, dtype=bool)
        n_target = np.zeros(len(batch), dtype=np.int64)
        for row, u in enumerate(batch):
            is_target[row, targets[u]] = True
            n_target[row] = len(targets[u])
        hits = np.take_along_axis(is_target, top, axis=1).astype(np.float64)
        for k in ks:
            kk = min(k, hits.shape[1])
            h = hits[:, :kk]
            out["recall"][k][start : start + len(batch)] = h.sum(axis=1) / n_target
            idcg = cum_disc[np.minimum(kk, n_target) - 1]
            out["ndcg"][k][start : start + len(batch)] = (h * discounts[:kk]).sum(axis=1) / idcg
    return users, out


def evaluate_all(
    estar: np.ndarray,
    ds: InteractionDataset,
    ks=DEFAULT_KS,
    split: str = "test",
    exclude_validation: bool = True,
    with_groups: bool = True,
) -> EvalReport:
    """Mean recall/ndcg over users with a nonempty target list, optionally per sparsity group."""
    users, per_user = per_user_metrics(estar, ds, ks, split, exclude_validation)
    ks = sorted(per_user["recall"])

    def means(sel):
        return {name: {k: float(np.mean(v[sel])) if np.any(sel) else 0.0 for k, v in per_k.items()}
                for name, per_k in per_user.items()}

    report = EvalReport(ks, means(np.ones(len(users), bool)), int(len(users)), split)
    if with_groups and len(users):
        groups = sparsity_groups(ds, users)
        position = {int(u): g for u, g in zip(groups.users, groups.group_of)}
        gid = np.array([position[int(u)] for u in users])
        for g, (bound, size) in enumerate(zip(groups.boundaries, groups.sizes)):
            report.groups.append(GroupReport(bound, size, means(gid == g)))
    return report


def evaluate_model(params, lap, cfg, ds, ks=DEFAULT_KS, split="test", exclude_validation=True, with_groups=True):
    return evaluate_all(final_embeddings(params, lap, cfg), ds, ks, split, exclude_validation, with_groups)
