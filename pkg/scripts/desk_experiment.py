"""Desk-scale comparison of NGCF-3 against MF on MovieLens-100K.

Both models are trained with early stopping on validation recall@20 while
test recall@20 is logged every epoch. Two properties are checked:

* NGCF's test recall@20 at its best-validation epoch is strictly higher than MF's.
* NGCF's per-epoch test recall first reaches MF's early-stopped value at an
  earlier epoch than MF itself does.

    python scripts/fetch_movielens.py          # once, writes data/ml-100k.tsv
    python scripts/desk_experiment.py --out runs/desk

Without data/ml-100k.tsv a synthetic data set of the same size is used.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from ngcf.dataset import RawInteractions, k_core_filter, load_interactions_file, split  # noqa: E402
from ngcf.graph import laplacian_for  # noqa: E402
from ngcf.model import ModelConfig  # noqa: E402
from ngcf.training import TrainConfig, fit, new_model, write_curve  # noqa: E402

SEED = 2019
K_CORE = 10
# each model's best validation recall@20 over the grid in scripts/tune_desk.py
MODELS = {
    "mf": (ModelConfig(variant="mf", embed_dim=64), dict(lr=5e-4, l2=1e-2, reg_mode="batch-embeddings")),
    "ngcf": (
        ModelConfig(variant="ngcf", embed_dim=64, layer_dims=(64, 64, 64), msg_dropout=0.1),
        dict(lr=1e-3, l2=1e-2, reg_mode="batch-embeddings"),
    ),
}
TRAIN_DEFAULTS = dict(batch_size=1024, max_epochs=400, patience=50, track_test=True, deterministic=True, seed=SEED)


@dataclass
class DeskResult:
    data: str
    mf_best_epoch: int
    mf_test_recall: float
    mf_epoch_reaching_own_best: int
    ngcf_best_epoch: int
    ngcf_test_recall: float
    ngcf_epoch_reaching_mf_best: int | None

    @property
    def ngcf_beats_mf(self) -> bool:
        return self.ngcf_test_recall > self.mf_test_recall

    @property
    def ngcf_faster(self) -> bool:
        return self.ngcf_epoch_reaching_mf_best is not None and self.ngcf_epoch_reaching_mf_best < self.mf_epoch_reaching_own_best

    def summary(self) -> str:
        return (
            f"{self.data}: test recall@20 NGCF {self.ngcf_test_recall:.4f} vs MF {self.mf_test_recall:.4f} "
            f"(strictly greater: {self.ngcf_beats_mf}); epochs to reach MF best: NGCF "
            f"{self.ngcf_epoch_reaching_mf_best} vs MF {self.mf_epoch_reaching_own_best} (fewer: {self.ngcf_faster})"
        )


def first_epoch_reaching(curve, level, key="test_recall@20"):
    return next((row["epoch"] for row in curve if row[key] >= level), None)


def load_data(raw_path: Path | None):
    if raw_path is not None:
        raw, label = load_interactions_file(raw_path), f"MovieLens-100K ({raw_path.name})"
    else:
        from make_synthetic import generate

        raw = RawInteractions([(f"u{u}", f"i{i}") for u, i in generate(seed=SEED)])
        label = "synthetic ML-100K-sized data"
    return split(k_core_filter(raw, K_CORE), seed=SEED), label


def run(raw_path: Path | None, out_dir: Path | None = None, log=print) -> DeskResult:
    ds, label = load_data(raw_path)
    lap = laplacian_for(ds)
    log(f"{label}: {ds.stats()}")
    curves, best = {}, {}
    for name, (model_cfg, overrides) in MODELS.items():
        train_cfg = TrainConfig(**{**TRAIN_DEFAULTS, **overrides})
        start = time.perf_counter()
        res = fit(new_model(ds, model_cfg, SEED), ds, lap, model_cfg, train_cfg)
        curves[name], best[name] = res.curve, res
        log(f"{name}: best epoch {res.best_epoch}, val {res.best_val_recall:.4f}, "
            f"test {res.curve[res.best_epoch - 1]['test_recall@20']:.4f}, {res.epochs_run} epochs, "
            f"{time.perf_counter() - start:.0f}s")
        if out_dir is not None:
            (out_dir / name).mkdir(parents=True, exist_ok=True)
            write_curve(res.curve, out_dir / name / "curve.csv")
    mf_test = curves["mf"][best["mf"].best_epoch - 1]["test_recall@20"]
    result = DeskResult(
        data=label,
        mf_best_epoch=best["mf"].best_epoch,
        mf_test_recall=mf_test,
        mf_epoch_reaching_own_best=first_epoch_reaching(curves["mf"], mf_test),
        ngcf_best_epoch=best["ngcf"].best_epoch,
        ngcf_test_recall=curves["ngcf"][best["ngcf"].best_epoch - 1]["test_recall@20"],
        ngcf_epoch_reaching_mf_best=first_epoch_reaching(curves["ngcf"], mf_test),
    )
    if out_dir is not None:
        (out_dir / "result.json").write_text(json.dumps(asdict(result), indent=2) + "\n")
        with open(out_dir / "curves.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["model", *curves["mf"][0]])
            writer.writeheader()
            for name, curve in curves.items():
                writer.writerows({"model": name, **row} for row in curve)
    return result


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--raw", type=Path, default=Path("data/ml-100k.tsv"))
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    args = ap.parse_args()
    result = run(args.raw if args.raw.is_file() else None, args.out)
    print(result.summary())
    return 0 if result.ngcf_beats_mf and result.ngcf_faster else 1


if __name__ == "__main__":
    sys.exit(main())
