import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_dataset, random_raw
from ngcf.dataset import (
    InteractionDataset,
    RawInteractions,
    TripleSampler,
    k_core_filter,
    load_interactions,
    sample_triples,
    split,
)
from ngcf.errors import DataError, ParseError


def test_load_edge_list():
    raw = load_interactions(io.StringIO("a\tx\na\ty\nb\tx\n"), "edge-list")
    assert raw.pairs == [("a", "x"), ("a", "y"), ("b", "x")]


def test_load_grouped():
    raw = load_interactions(io.StringIO("0 5 7\n1 5\n"), "grouped")
    assert raw.pairs == [("0", "5"), ("0", "7"), ("1", "5")]


def test_duplicates_kept_then_removed():
    raw = load_interactions(io.StringIO("a\tx\na\tx\n"))
    assert len(raw) == 2
    assert len(raw.deduplicated()) == 1


@pytest.mark.parametrize(
    "text, fmt, line",
    [
        ("a\tx\nbad line with spaces\n", "edge-list", 2),
        ("a\tx\tz\n", "edge-list", 1),
        ("0 1\n1 two\n", "grouped", 2),
    ],
)
def test_malformed_lines_report_line_number(text, fmt, line):
    with pytest.raises(ParseError) as info:
        load_interactions(io.StringIO(text), fmt)
    assert info.value.line_no == line
    assert f"line {line}" in str(info.value)


def test_non_utf8_reports_line_number():
    with pytest.raises(ParseError) as info:
        load_interactions(io.BytesIO(b"a\tx\n\xff\xfe\tz\n"))
    assert info.value.line_no == 2


def test_k_core_cascading_removal_to_empty():
    raw = RawInteractions([("u1", "i1"), ("u1", "i2"), ("u2", "i1")])
    assert k_core_filter(raw, 2).pairs == []


def test_k_core_complete_bipartite_unchanged():
    pairs = [(f"u{a}", f"i{b}") for a in range(3) for b in range(3)]
    assert k_core_filter(RawInteractions(pairs), 3).pairs == pairs


def test_k_core_k1_is_dedup(rng):
    raw = random_raw(rng)
    raw = RawInteractions(raw.pairs + raw.pairs[:5])
    assert k_core_filter(raw, 1).pairs == raw.deduplicated().pairs


def brute_force_core(pairs, k):
    """Remove one offending node at a time until none remain."""
    edges = set(pairs)
    while True:
        du, di = {}, {}
        for u, i in edges:
            du[u] = du.get(u, 0) + 1
            di[i] = di.get(i, 0) + 1
        bad_u = next((u for u, d in du.items() if d < k), None)
        if bad_u is not None:
            edges = {e for e in edges if e[0] != bad_u}
            continue
        bad_i = next((i for i, d in di.items() if d < k), None)
        if bad_i is None:
            return edges
        edges = {e for e in edges if e[1] != bad_i}


pair_lists = st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), max_size=60).map(
    lambda ps: [(f"u{a}", f"i{b}") for a, b in ps]
)


@given(pair_lists, st.integers(1, 4))
def test_k_core_matches_brute_force_and_is_fixpoint(pairs, k):
    out = k_core_filter(RawInteractions(pairs), k)
    assert set(out.pairs) == brute_force_core(pairs, k)
    assert k_core_filter(out, k).pairs == out.pairs


def test_split_counts_per_user():
    pairs = [("a", f"i{j}") for j in range(10)] + [("b", "i0")]
    pairs += [(f"f{j}", f"i{j}") for j in range(10)]  # keep every item in train
    ds = split(RawInteractions(pairs), val_frac_of_train=0.0, seed=3)
    a, b = ds.user_map["a"], ds.user_map["b"]
    assert (len(ds.train[a]), len(ds.test[a])) == (8, 2)
    assert (len(ds.train[b]), len(ds.test[b])) == (1, 0)


def test_split_ceiling_is_not_fooled_by_rounding():
    pairs = [("a", f"i{j}") for j in range(15)] + [(f"f{j}", f"i{j}") for j in range(15)]
    ds = split(RawInteractions(pairs), val_frac_of_train=0.0, seed=0)
    assert len(ds.train[ds.user_map["a"]]) == 12


def test_split_is_deterministic(rng, tmp_path):
    raw = random_raw(rng)
    split(raw, seed=11).save(tmp_path / "a")
    split(raw, seed=11).save(tmp_path / "b")
    for name in ("train.txt", "valid.txt", "test.txt", "stats.json", "user_map.tsv", "item_map.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "train.txt").read_bytes() != b""


@given(st.integers(0, 2**32 - 1))
def test_split_is_a_partition_of_retained_pairs(seed):
    r = np.random.default_rng(seed)
    raw = random_raw(r, n_users=12, n_items=15, per_user=(1, 8))
    ds = split(raw, seed=seed)
    ds.validate()
    inv_items = {v: k for k, v in ds.item_map.items()}
    inv_users = {v: k for k, v in ds.user_map.items()}
    got = set()
    for lists in (ds.train, ds.validation, ds.test):
        for u, xs in enumerate(lists):
            got |= {(inv_users[u], inv_items[int(i)]) for i in xs}
    expected = {p for p in raw.deduplicated().pairs if p[1] in ds.item_map}
    assert got == expected
    assert sum(len(x) for x in ds.train) + ds.n_valid + ds.n_test == len(expected)
    # every user and item has a train interaction
    assert all(len(x) for x in ds.train)
    assert len(set(np.concatenate(ds.train).tolist())) == ds.n_items


def test_split_validation_fraction(rng):
    raw = random_raw(rng, n_users=200, n_items=60, per_user=(5, 20))
    ds = split(raw, seed=1)
    pool = ds.n_train + ds.n_valid
    assert ds.n_valid == int(0.1 * pool)


def test_cold_start_items_removed_from_test():
    # "z" has a single interaction; whenever it lands in test it must be dropped
    pairs = [("a", "x"), ("a", "y"), ("a", "z"), ("b", "x"), ("b", "y")]
    for seed in range(20):
        ds = split(RawInteractions(pairs), val_frac_of_train=0.0, seed=seed)
        trained = set(np.concatenate(ds.train).tolist())
        assert trained == set(range(ds.n_items))
        for xs in ds.test:
            assert set(xs.tolist()) <= trained


def test_save_load_roundtrip(small_ds, tmp_path):
    small_ds.save(tmp_path)
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert set(stats) == {"n_users", "n_items", "n_train", "n_valid", "n_test"}
    back = InteractionDataset.load(tmp_path)
    assert back.stats() == small_ds.stats()
    for name in ("train", "validation", "test"):
        assert all(np.array_equal(a, b) for a, b in zip(getattr(back, name), getattr(small_ds, name)))
    assert back.item_map == small_ds.item_map


def test_load_missing_stats_is_data_error(tmp_path):
    with pytest.raises(DataError):
        InteractionDataset.load(tmp_path)


def test_sampler_forced_triple():
    ds = make_dataset([[0]], n_items=2)
    batch = sample_triples(ds, 50, np.random.default_rng(0))
    assert set(batch.triples()) == {(0, 0, 1)}


def test_sampler_skips_saturated_users():
    ds = make_dataset([[0, 1, 2], [1]], n_items=3)
    batch = sample_triples(ds, 200, np.random.default_rng(0))
    assert set(batch.users.tolist()) == {1}


def test_sampler_user_frequencies():
    ds = make_dataset([[0, 1], [2, 3]], n_items=6)
    batch = sample_triples(ds, 100_000, np.random.default_rng(1))
    freq = np.mean(batch.users == 0)
    assert abs(freq - 0.5) < 0.01


@given(st.integers(0, 2**32 - 1))
def test_sampler_contract(seed):
    r = np.random.default_rng(seed)
    ds = split(random_raw(r, n_users=10, n_items=12, per_user=(1, 11)), seed=seed)
    sampler = TripleSampler(ds)
    batch = sampler.sample(64, r)
    for u, i, j in batch.triples():
        assert i in ds.train[u]
        assert j not in ds.train[u]
        assert 0 <= j < ds.n_items


def test_sampler_rejects_bad_batch(small_ds):
    with pytest.raises(ValueError):
        sample_triples(small_ds, 0, np.random.default_rng(0))
