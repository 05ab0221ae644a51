"""Command-line entry point: ``ngcf {prepare,train,evaluate,gradcheck,export-embeddings,curves}``.

Run configuration is a JSON object::

    {
      "data": "runs/ml100k/data",      # prepared dataset directory
      "out": "runs/ml100k/ngcf3",      # output directory for train
      "seed": 2019,                    # root seed, split per subsystem
      "warm_start": null,              # optional MF checkpoint for E0
      "eval_ks": [20],
      "model": {...ModelConfig fields...},
      "train": {...TrainConfig fields...}
    }

Any model or train field can be overridden with ``--field-name value``
(underscores become dashes); flags beat the file, the file beats defaults.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import InteractionDataset, k_core_filter, load_interactions_file, split
from .errors import ConfigError, DataError, NGCFError
from .evaluation import evaluate_model
from .graph import laplacian_for
from .model import VARIANTS, ModelConfig, export_embeddings, final_embeddings
from .training import TrainConfig, fit, grad_check, gradcheck_config, new_model, write_curve

log = logging.getLogger("ngcf")

TOP_LEVEL = ("data", "out", "seed", "warm_start", "eval_ks")


@dataclasses.dataclass
class RunConfig:
    data: str
    out: str
    model: ModelConfig
    train: TrainConfig
    seed: int = 2019
    warm_start: str | None = None
    eval_ks: tuple[int, ...] = (20,)

    def validate(self) -> None:
        if not (Path(self.data) / "stats.json").is_file():
            raise DataError(f"{self.data}: not a prepared dataset directory (run 'ngcf prepare')")
        if self.warm_start is not None and not Path(self.warm_start).is_file():
            raise ConfigError(f"warm-start checkpoint {self.warm_start} does not exist")
        if not self.eval_ks or any(int(k) < 1 for k in self.eval_ks):
            raise ConfigError("eval_ks must be a nonempty list of positive integers")

    def echo(self) -> dict:
        """Path-free record stored in checkpoints, so reruns elsewhere stay byte-identical."""
        return {"seed": self.seed, "model": self.model.to_dict(), "train": self.train.to_dict(), "eval_ks": list(self.eval_ks)}

    def to_dict(self) -> dict:
        return {"data": self.data, "out": self.out, "warm_start": self.warm_start, **self.echo()}


def _field_type(cls, name):
    default = cls.__dataclass_fields__[name].default
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, tuple):
        return _parse_int_list
    if isinstance(default, (int, float, str)):
        return type(default)
    return str


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of integers: {text!r}") from None


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--data", default=argparse.SUPPRESS, help="prepared dataset directory")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--warm-start", default=argparse.SUPPRESS, metavar="MF_CHECKPOINT",
                   help="initialise E0 from a trained mf checkpoint")
    p.add_argument("--eval-ks", type=_parse_int_list, default=argparse.SUPPRESS, metavar="K[,K...]")
    p.add_argument("--layers", type=int, default=argparse.SUPPRESS, metavar="L",
                   help="L propagation layers of width embed_dim (shorthand for --layer-dims)")
    g = p.add_argument_group("model")
    for name in ModelConfig.__dataclass_fields__:
        kw = {"choices": VARIANTS} if name == "variant" else {}
        g.add_argument(_flag(name), dest=f"model.{name}", type=_field_type(ModelConfig, name),
                       default=argparse.SUPPRESS, **kw)
    g = p.add_argument_group("train")
    for name in TrainConfig.__dataclass_fields__:
        if name == "seed":
            continue  # the root --seed drives it
        if name == "deterministic":
            g.add_argument("--deterministic", dest="train.deterministic", nargs="?", const=True,
                           type=_parse_bool, default=argparse.SUPPRESS)
            continue
        g.add_argument(_flag(name), dest=f"train.{name}", type=_field_type(TrainConfig, name),
                       default=argparse.SUPPRESS)


def _read_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults < config file < flags."""
    file_cfg = _read_json(args.config) if getattr(args, "config", None) else {}
    unknown = set(file_cfg) - set(TOP_LEVEL) - {"model", "train"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    model = dict(file_cfg.get("model", {}))
    train = dict(file_cfg.get("train", {}))
    top = {k: file_cfg[k] for k in TOP_LEVEL if k in file_cfg}
    for key, value in vars(args).items():
        if key.startswith("model."):
            model[key[6:]] = value
        elif key.startswith("train."):
            train[key[6:]] = value
        elif key in TOP_LEVEL:
            top[key] = value
    if "layers" in vars(args):
        model["layer_dims"] = (int(model.get("embed_dim", 64)),) * args.layers
    for section, cls in (("model", ModelConfig), ("train", TrainConfig)):
        bad = set(model if section == "model" else train) - set(cls.__dataclass_fields__)
        if bad:
            raise ConfigError(f"unknown {section} keys: {sorted(bad)}")
    seed = int(top.get("seed", train.get("seed", TrainConfig.seed)))
    train["seed"] = seed
    try:
        model_cfg = ModelConfig(**model)
        train_cfg = TrainConfig(**train)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    for key in ("data", "out"):
        if key not in top:
            raise ConfigError(f"missing required setting '{key}' (flag --{key} or config file)")
    return RunConfig(
        data=str(top["data"]),
        out=str(top["out"]),
        model=model_cfg,
        train=train_cfg,
        seed=seed,
        warm_start=top.get("warm_start"),
        eval_ks=tuple(int(k) for k in top.get("eval_ks", (20,))),
    )


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_prepare(args) -> int:
    if args.k_core < 1:
        raise ConfigError("--k-core must be at least 1")
    try:
        raw = load_interactions_file(args.raw, args.format)
    except FileNotFoundError:
        raise DataError(f"{args.raw}: no such file") from None
    core = k_core_filter(raw, args.k_core)
    if not core.pairs:
        raise DataError(f"no interactions survive the {args.k_core}-core filter")
    ds = split(core, seed=args.seed)
    ds.save(args.out)
    print(json.dumps(ds.stats(), sort_keys=True))
    return 0


def _warm_start(params, run: RunConfig):
    ck = load_checkpoint(run.warm_start)
    if ck.params.E0.shape != params.E0.shape:
        raise ConfigError(f"warm-start embeddings have shape {ck.params.E0.shape}, expected {params.E0.shape}")
    params.E0[...] = ck.params.E0.astype(params.E0.dtype)
    log.info("initialised E0 from %s", run.warm_start)


def cmd_train(args) -> int:
    run = resolve_config(args)
    run.validate()
    ds = InteractionDataset.load(run.data)
    lap = laplacian_for(ds)
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", run.to_dict())
    params = new_model(ds, run.model, run.seed)
    if run.warm_start:
        _warm_start(params, run)

    def progress(row):
        log.info("epoch %d loss %.5f val recall %.4f", row["epoch"], row["train_loss"], row[f"val_recall@{run.train.stop_k}"])

    res = fit(params, ds, lap, run.model, run.train, config_echo=run.echo(), on_epoch=progress)
    write_curve(res.curve, out / "curve.csv")
    save_checkpoint(res.best.params, out / "best.ckpt", run.echo(), res.best_epoch, res.best.rng_state)
    report = evaluate_model(res.best.params, lap, run.model, ds, run.eval_ks, "test", run.train.exclude_validation)
    report.write_json(out / "test_report.json")
    report.write_csv(out / "test_report.csv")
    summary = {"best_epoch": res.best_epoch, "epochs_run": res.epochs_run, "val_recall": res.best_val_recall}
    summary.update({f"test_recall@{k}": report.recall(k) for k in report.k_values})
    summary.update({f"test_ndcg@{k}": report.ndcg(k) for k in report.k_values})
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    ds = InteractionDataset.load(args.data)
    report = evaluate_model(ck.params, laplacian_for(ds), ck.model_config, ds, tuple(args.k), args.split,
                            not args.include_validation, with_groups=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.write_json(out / f"{args.split}_report.json")
        report.write_csv(out / f"{args.split}_report.csv")
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    variants = [v for v in VARIANTS if v != "mf"] if args.variant == "all" else [args.variant]
    ok = True
    for variant in variants:
        for seed in range(args.seed, args.seed + args.n_seeds):
            report = grad_check(gradcheck_config(variant), seed=seed, reg_mode=args.reg_mode)
            print(report.summary())
            ok &= report.passed
    print("PASS" if ok else "FAIL")
    return 0 if ok else 3


def cmd_export_embeddings(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    ds = InteractionDataset.load(args.data)
    estar = final_embeddings(ck.params, laplacian_for(ds), ck.model_config)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        export_embeddings(estar, fh)
    return 0


def cmd_curves(args) -> int:
    rows, fields = [], ["run"]
    for run_dir in args.runs:
        path = Path(run_dir) / "curve.csv"
        if not path.is_file():
            raise DataError(f"{path}: no curve file")
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            fields += [f for f in reader.fieldnames or [] if f not in fields]
            label = Path(run_dir).name
            rows += [{"run": label, **r} for r in reader]
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=fields, restval="", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ngcf", description="Graph collaborative filtering: prepare data, train, evaluate.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="k-core filter and split raw interactions")
    p.add_argument("raw", help="raw interaction file")
    p.add_argument("--out", required=True, help="dataset directory to write")
    p.add_argument("--k-core", type=int, default=10)
    p.add_argument("--seed", type=int, default=2019)
    p.add_argument("--format", choices=("edge-list", "grouped"), default="edge-list")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one configuration and evaluate its best checkpoint")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="full-ranking evaluation of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, nargs="+", default=[20])
    p.add_argument("--split", choices=("test", "validation"), default="test")
    p.add_argument("--include-validation", action="store_true", help="keep validation items rankable on test")
    p.add_argument("--out", help="directory for report JSON/CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--variant", choices=("all",) + VARIANTS, default="all")
    p.add_argument("--reg-mode", choices=("all-params", "batch-embeddings"), default="all-params")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-embeddings", help="write final representations as TSV")
    p.add_argument("checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("curves", help="merge curve.csv files of several runs")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--out", help="merged CSV (stdout if omitted)")
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        np.seterr(over="ignore", invalid="ignore")  # divergence is detected and reported explicitly
        return args.func(args)
    except NGCFError as exc:
        print(f"ngcf: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"ngcf: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
