"""Interaction logs: parsing, k-core filtering, train/validation/test split,
on-disk cache and BPR triple sampling."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, NamedTuple

import numpy as np

from .errors import DataError, ParseError
from .numeric import SparseMatrix, make_rng

FORMATS = ("edge-list", "grouped")


@dataclass
class RawInteractions:
    """(user, item) pairs with external string ids; duplicates allowed."""

    pairs: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    def deduplicated(self) -> "RawInteractions":
        return RawInteractions(list(dict.fromkeys(self.pairs)))


def _lines(source: IO) -> Iterator[tuple[int, str]]:
    for line_no, line in enumerate(source, start=1):
        if isinstance(line, bytes):
            try:
                line = line.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ParseError(line_no, f"invalid UTF-8 ({exc.reason})") from None
        yield line_no, line.rstrip("\r\n")


def load_interactions(source: IO, format: str = "edge-list") -> RawInteractions:
    """Parse an interaction log.

    ``edge-list``: one ``user<TAB>item`` per line. ``grouped``: one
    ``user item1 item2 ...`` per line of whitespace-separated integers.
    Text or binary streams are accepted; blank lines are skipped.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    pairs: list[tuple[str, str]] = []
    for line_no, line in _lines(source):
        if not line.strip():
            continue
        if format == "edge-list":
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0] or not fields[1]:
                raise ParseError(line_no, f"expected 'user<TAB>item', got {len(fields)} field(s)")
            pairs.append((fields[0], fields[1]))
        else:
            tokens = line.split()
            try:
                ids = [str(int(t)) for t in tokens]
            except ValueError:
                raise ParseError(line_no, "grouped format expects whitespace-separated integers") from None
            pairs.extend((ids[0], item) for item in ids[1:])
    return RawInteractions(pairs)


def load_interactions_file(path: str | Path, format: str = "edge-list") -> RawInteractions:
    with open(path, "rb") as fh:
        return load_interactions(fh, format)


def _encode(pairs: list[tuple[str, str]]):
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    u = np.array([users.setdefault(a, len(users)) for a, _ in pairs], dtype=np.int64)
    i = np.array([items.setdefault(b, len(items)) for _, b in pairs], dtype=np.int64)
    return u, i, list(users), list(items)


def k_core_filter(raw: RawInteractions, k: int) -> RawInteractions:
    """Maximal sub-bipartite-graph in which every user and item has degree >= k.

    Output is deduplicated and keeps the input's first-appearance order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pairs = raw.deduplicated().pairs
    if not pairs:
        return RawInteractions([])
    u, i, _, _ = _encode(pairs)
    keep = np.ones(len(pairs), dtype=bool)
    while True:
        du = np.bincount(u[keep], minlength=u.max() + 1)
        di = np.bincount(i[keep], minlength=i.max() + 1)
        bad = keep & ((du[u] < k) | (di[i] < k))
        if not bad.any():
            break
        keep &= ~bad
    return RawInteractions([p for p, kept in zip(pairs, keep) if kept])


def _frozen(lists: Iterable[Iterable[int]]) -> tuple[np.ndarray, ...]:
    out = []
    for xs in lists:
        arr = np.array(sorted(xs), dtype=np.int64)
        arr.flags.writeable = False
        out.append(arr)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    n_users: int
    n_items: int
    train: tuple[np.ndarray, ...]
    validation: tuple[np.ndarray, ...]
    test: tuple[np.ndarray, ...]
    user_map: dict[str, int]
    item_map: dict[str, int]

    @property
    def n_train(self) -> int:
        return int(sum(len(x) for x in self.train))

    @property
    def n_valid(self) -> int:
        return int(sum(len(x) for x in self.validation))

    @property
    def n_test(self) -> int:
        return int(sum(len(x) for x in self.test))

    def train_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        users = np.repeat(np.arange(self.n_users, dtype=np.int64), [len(x) for x in self.train])
        items = np.concatenate(self.train) if self.n_users else np.zeros(0, np.int64)
        return users, items

    def train_matrix(self) -> SparseMatrix:
        """User x item 0/1 matrix of training interactions."""
        u, i = self.train_pairs()
        return SparseMatrix.from_coo(u, i, np.ones(len(u)), (self.n_users, self.n_items))

    def stats(self) -> dict[str, int]:
        return {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_train": self.n_train,
            "n_valid": self.n_valid,
            "n_test": self.n_test,
        }

    def validate(self) -> None:
        for name in ("train", "validation", "test"):
            lists = getattr(self, name)
            if len(lists) != self.n_users:
                raise DataError(f"{name} has {len(lists)} user lists, expected {self.n_users}")
            for u, xs in enumerate(lists):
                if len(xs) and (xs.min() < 0 or xs.max() >= self.n_items):
                    raise DataError(f"{name}[{u}] references an item outside 0..{self.n_items - 1}")
        for u in range(self.n_users):
            tr, va, te = set(self.train[u]), set(self.validation[u]), set(self.test[u])
            if tr & va or tr & te or va & te:
                raise DataError(f"user {u}: train/validation/test overlap")

    def save(self, out_dir: str | Path) -> None:
        """Write ``train.txt``/``valid.txt``/``test.txt`` (grouped), id maps and ``stats.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for fname, lists in (("train.txt", self.train), ("valid.txt", self.validation), ("test.txt", self.test)):
            with open(out / fname, "w", encoding="utf-8", newline="\n") as fh:
                for u, xs in enumerate(lists):
                    fh.write(" ".join([str(u), *map(str, xs.tolist())]) + "\n")
        for fname, mapping in (("user_map.tsv", self.user_map), ("item_map.tsv", self.item_map)):
            with open(out / fname, "w", encoding="utf-8", newline="\n") as fh:
                for ext, idx in mapping.items():
                    fh.write(f"{ext}\t{idx}\n")
        with open(out / "stats.json", "w", encoding="utf-8") as fh:
            json.dump(self.stats(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, data_dir: str | Path) -> "InteractionDataset":
        d = Path(data_dir)
        try:
            stats = json.loads((d / "stats.json").read_text(encoding="utf-8"))
            n_users, n_items = int(stats["n_users"]), int(stats["n_items"])
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"cannot read dataset stats in {d}: {exc}") from None

        def grouped(fname: str) -> tuple[np.ndarray, ...]:
            lists: list[list[int]] = [[] for _ in range(n_users)]
            with open(d / fname, "rb") as fh:
                for u, i in load_interactions(fh, "grouped").pairs:
                    u_idx = int(u)
                    if not 0 <= u_idx < n_users:
                        raise DataError(f"{fname}: user {u_idx} outside 0..{n_users - 1}")
                    lists[u_idx].append(int(i))
            return _frozen(lists)

        def read_map(fname: str) -> dict[str, int]:
            path = d / fname
            if not path.exists():
                return {}
            out = {}
            for line in path.read_text(encoding="utf-8").splitlines():
                ext, idx = line.split("\t")
                out[ext] = int(idx)
            return out

        ds = cls(
            n_users,
            n_items,
            grouped("train.txt"),
            grouped("valid.txt"),
            grouped("test.txt"),
            read_map("user_map.tsv"),
            read_map("item_map.tsv"),
        )
        ds.validate()
        return ds


def _ceil_frac(frac: float, n: int) -> int:
    # round first so that e.g. 0.8 * 15 = 12.000000000000002 does not ceil to 13
    return math.ceil(round(frac * n, 9))


def split(
    raw: RawInteractions,
    train_frac: float = 0.8,
    val_frac_of_train: float = 0.1,
    seed: int = 0,
) -> InteractionDataset:
    """Per-user train/test split, then a global validation draw from the train pool.

    Each user keeps ``ceil(train_frac * deg)`` interactions for the train
    pool; the rest are test. ``val_frac_of_train`` of the pooled train
    interactions (uniform, without replacement) become validation, except
    that a user never loses their last train interaction. Items without any
    train interaction are dropped and the item index is compacted.
    """
    rng = make_rng(seed, "dataset")
    pairs = raw.deduplicated().pairs
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    per_user: list[list[int]] = []
    for a, b in pairs:
        u = user_ids.setdefault(a, len(user_ids))
        if u == len(per_user):
            per_user.append([])
        per_user[u].append(item_ids.setdefault(b, len(item_ids)))

    pool_u: list[int] = []
    pool_i: list[int] = []
    test: list[list[int]] = []
    for u, items in enumerate(per_user):
        order = rng.permutation(len(items))
        n_tr = _ceil_frac(train_frac, len(items))
        chosen = [items[k] for k in order]
        pool_u.extend([u] * n_tr)
        pool_i.extend(chosen[:n_tr])
        test.append(chosen[n_tr:])

    n_val = int(math.floor(round(val_frac_of_train * len(pool_u), 9)))
    is_val = np.zeros(len(pool_u), dtype=bool)
    if n_val:
        is_val[rng.choice(len(pool_u), size=n_val, replace=False)] = True
    n_users = len(per_user)
    train: list[list[int]] = [[] for _ in range(n_users)]
    validation: list[list[int]] = [[] for _ in range(n_users)]
    for u, i, v in zip(pool_u, pool_i, is_val):
        (validation if v else train)[u].append(i)
    for u in range(n_users):
        if not train[u]:
            train[u], validation[u] = validation[u], []

    train_deg = np.zeros(len(item_ids), dtype=np.int64)
    for xs in train:
        train_deg[xs] += 1
    kept = train_deg > 0
    remap = np.full(len(item_ids), -1, dtype=np.int64)
    remap[kept] = np.arange(int(kept.sum()))

    def compact(lists: list[list[int]]) -> tuple[np.ndarray, ...]:
        return _frozen([int(remap[i]) for i in xs if remap[i] >= 0] for xs in lists)

    item_map = {ext: int(remap[idx]) for ext, idx in item_ids.items() if remap[idx] >= 0}
    return InteractionDataset(
        n_users=n_users,
        n_items=int(kept.sum()),
        train=compact(train),
        validation=compact(validation),
        test=compact(test),
        user_map=dict(user_ids),
        item_map=item_map,
    )


class BprTriple(NamedTuple):
    u: int
    i: int
    j: int


class BprBatch(NamedTuple):
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def triples(self) -> list[BprTriple]:
        return [BprTriple(int(a), int(b), int(c)) for a, b, c in zip(self.users, self.pos, self.neg)]


class TripleSampler:
    """Uniform (user, positive, negative) sampler over a fixed training set."""

    def __init__(self, ds: InteractionDataset):
        self.n_items = ds.n_items
        self.offsets = np.zeros(ds.n_users + 1, dtype=np.int64)
        np.cumsum([len(x) for x in ds.train], out=self.offsets[1:])
        self.items = np.concatenate(ds.train) if ds.n_users else np.zeros(0, np.int64)
        deg = np.diff(self.offsets)
        self.eligible = np.flatnonzero((deg >= 1) & (deg < ds.n_items))
        u, i = ds.train_pairs()
        self._keys = u * ds.n_items + i  # sorted: users ascending, items sorted per user

    def contains(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        keys = users * self.n_items + items
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, len(self._keys) - 1)
        return self._keys[pos] == keys

    def sample(self, batch_size: int, rng: np.random.Generator) -> BprBatch:
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if len(self.eligible) == 0:
            raise DataError("no user has both a training item and an unobserved item")
        users = self.eligible[rng.integers(0, len(self.eligible), size=batch_size)]
        start = self.offsets[users]
        deg = self.offsets[users + 1] - start
        pos = self.items[start + rng.integers(0, deg)]
        neg = rng.integers(0, self.n_items, size=batch_size)
        clash = np.flatnonzero(self.contains(users, neg))
        while clash.size:
            neg[clash] = rng.integers(0, self.n_items, size=clash.size)
            clash = clash[self.contains(users[clash], neg[clash])]
        return BprBatch(users, pos, neg)


def sample_triples(ds: InteractionDataset, batch_size: int, rng: np.random.Generator) -> BprBatch:
    return TripleSampler(ds).sample(batch_size, rng)
