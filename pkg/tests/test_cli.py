import csv
import json

import numpy as np
import pytest

from conftest import random_raw
from ngcf.checkpoint import load_checkpoint, save_checkpoint
from ngcf.cli import build_parser, main, resolve_config
from ngcf.dataset import InteractionDataset


@pytest.fixture
def raw_file(tmp_path):
    raw = random_raw(np.random.default_rng(3), n_users=40, n_items=30, per_user=(4, 14))
    path = tmp_path / "raw.tsv"
    path.write_text("".join(f"{u}\t{i}\n" for u, i in raw.pairs))
    return path


@pytest.fixture
def data_dir(tmp_path, raw_file):
    out = tmp_path / "data"
    assert main(["prepare", str(raw_file), "--out", str(out), "--k-core", "3"]) == 0
    return out


TINY = ["--embed-dim", "8", "--layers", "2", "--max-epochs", "3", "--batch-size", "64"]


def train(data_dir, out, *extra):
    return main(["train", "--data", str(data_dir), "--out", str(out), *TINY, *extra])


def test_prepare_enforces_core_degrees(data_dir):
    ds = InteractionDataset.load(data_dir)
    deg_u = np.zeros(ds.n_users, int)
    deg_i = np.zeros(ds.n_items, int)
    for split_lists in (ds.train, ds.validation, ds.test):
        for u, items in enumerate(split_lists):
            deg_u[u] += len(items)
            np.add.at(deg_i, items, 1)
    assert deg_u.min() >= 3
    stats = json.loads((data_dir / "stats.json").read_text())
    assert stats["n_users"] + stats["n_items"] > 0


def test_prepare_k1_only_deduplicates(tmp_path, raw_file):
    raw_file.write_text(raw_file.read_text() + raw_file.read_text().splitlines(keepends=True)[0])
    assert main(["prepare", str(raw_file), "--out", str(tmp_path / "d"), "--k-core", "1"]) == 0
    ds = InteractionDataset.load(tmp_path / "d")
    n_unique = len(set(raw_file.read_text().splitlines()))
    # items that never make it into train are dropped along with their pairs
    assert ds.n_train + ds.n_valid + ds.n_test <= n_unique
    assert ds.n_users == len({line.split("\t")[0] for line in raw_file.read_text().splitlines()})


def test_prepare_is_reproducible(tmp_path, raw_file):
    for name in ("a", "b"):
        assert main(["prepare", str(raw_file), "--out", str(tmp_path / name), "--k-core", "3", "--seed", "5"]) == 0
    for f in ("train.txt", "valid.txt", "test.txt", "stats.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_precedence_flags_over_file_over_defaults(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": "d", "out": "o", "model": {"embed_dim": 16, "msg_dropout": 0.3},
                               "train": {"lr": 0.01, "l2": 0.5}}))
    args = build_parser().parse_args(["train", "--config", str(cfg), "--lr", "0.002", "--layers", "2"])
    run = resolve_config(args)
    assert run.train.lr == 0.002  # flag
    assert run.train.l2 == 0.5  # file
    assert run.train.batch_size == 1024  # default
    assert run.model.layer_dims == (16, 16)
    assert run.model.msg_dropout == 0.3


def test_every_config_field_has_a_flag():
    from ngcf.model import ModelConfig
    from ngcf.training import TrainConfig

    help_text = build_parser()._subparsers._group_actions[0].choices["train"].format_help()
    for cls in (ModelConfig, TrainConfig):
        for name in cls.__dataclass_fields__:
            assert "--" + name.replace("_", "-") in help_text


def test_train_writes_artifacts(tmp_path, data_dir):
    out = tmp_path / "run"
    assert train(data_dir, out, "--eval-ks", "5,20") == 0
    for name in ("best.ckpt", "curve.csv", "test_report.json", "test_report.csv", "config.json"):
        assert (out / name).is_file()
    header = (out / "curve.csv").read_text().splitlines()[0]
    assert header == "epoch,train_loss,val_recall@20,val_ndcg@20,elapsed_s"
    report = json.loads((out / "test_report.json").read_text())
    assert report["k_values"] == [5, 20]
    assert load_checkpoint(out / "best.ckpt").model_config.layer_dims == (8, 8)


def test_deterministic_train_is_byte_identical(tmp_path, data_dir):
    for name in ("a", "b"):
        assert train(data_dir, tmp_path / name, "--deterministic", "--node-dropout", "0.1") == 0
    for f in ("best.ckpt", "curve.csv", "test_report.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_evaluate_export_and_curves(tmp_path, data_dir, capsys):
    for name, variant in (("ngcf", "ngcf"), ("mf", "mf")):
        assert train(data_dir, tmp_path / name, "--variant", variant) == 0
    capsys.readouterr()
    ckpt = tmp_path / "ngcf" / "best.ckpt"
    assert main(["evaluate", str(ckpt), "--data", str(data_dir), "--k", "10", "20", "--out", str(tmp_path / "ev")]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["metrics"]["recall"]["20"] == json.loads((tmp_path / "ngcf" / "test_report.json").read_text())["metrics"]["recall"]["20"]
    assert (tmp_path / "ev" / "test_report.csv").is_file()

    tsv = tmp_path / "emb.tsv"
    assert main(["export-embeddings", str(ckpt), "--data", str(data_dir), "--out", str(tsv)]) == 0
    ds = InteractionDataset.load(data_dir)
    lines = tsv.read_text().splitlines()
    assert len(lines) == ds.n_users + ds.n_items
    assert len(lines[0].split("\t")) == 1 + 8 * 3

    merged = tmp_path / "curves.csv"
    assert main(["curves", str(tmp_path / "ngcf"), str(tmp_path / "mf"), "--out", str(merged)]) == 0
    rows = list(csv.DictReader(open(merged)))
    assert [r["run"] for r in rows] == ["ngcf"] * 3 + ["mf"] * 3


def test_warm_start_copies_mf_embeddings(tmp_path, data_dir):
    assert train(data_dir, tmp_path / "mf", "--variant", "mf") == 0
    mf = load_checkpoint(tmp_path / "mf" / "best.ckpt")
    assert train(data_dir, tmp_path / "w", "--warm-start", str(tmp_path / "mf" / "best.ckpt"), "--max-epochs", "1",
                 "--lr", "1e-12") == 0
    warm = load_checkpoint(tmp_path / "w" / "best.ckpt")
    assert np.allclose(warm.params.E0, mf.params.E0, atol=1e-9)


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--n-seeds", "1", "--variant", "ngcf"]) == 0
    assert capsys.readouterr().out.strip().endswith("PASS")


def test_exit_codes(tmp_path, data_dir, raw_file):
    assert main(["train", "--notaflag"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["train", "--config", str(bad)]) == 1
    assert main(["train", "--data", str(data_dir), "--out", str(tmp_path / "x"), "--lr", "-1"]) == 1
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "x")]) == 2
    assert main(["prepare", str(tmp_path / "missing.tsv"), "--out", str(tmp_path / "y")]) == 2
    malformed = tmp_path / "m.tsv"
    malformed.write_text("a\tb\nbroken\n")
    assert main(["prepare", str(malformed), "--out", str(tmp_path / "z")]) == 2
    assert main(["evaluate", str(raw_file), "--data", str(data_dir)]) == 2  # not a checkpoint
    # a non-finite warm start diverges on the first forward pass
    ds = InteractionDataset.load(data_dir)
    ck = tmp_path / "nan.ckpt"
    from ngcf.model import ModelConfig, ModelParams

    E0 = np.full((ds.n_users + ds.n_items, 8), np.nan, dtype=np.float32)
    save_checkpoint(ModelParams(E0), ck, {"model": ModelConfig(variant="mf", embed_dim=8).to_dict()})
    assert train(data_dir, tmp_path / "nan", "--warm-start", str(ck)) == 3
