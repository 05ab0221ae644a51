"""BPR objective, Adam, the mini-batch loop, early stopping and gradient checking."""
from __future__ import annotations

import contextlib
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import Checkpoint
from .dataset import BprBatch, InteractionDataset, TripleSampler
from .errors import ConfigError, DivergenceError
from .evaluation import evaluate_all
from .graph import NormalizedLaplacian, build_laplacian, SparseMatrix
from .model import ModelConfig, ModelParams, backward, forward, init_params
from .numeric import make_rng, scatter_add_rows, softplus

log = logging.getLogger(__name__)

REG_MODES = ("all-params", "batch-embeddings")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    l2: float = 1e-5
    batch_size: int = 1024
    max_epochs: int = 400
    patience: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 2019
    reg_mode: str = "all-params"
    stop_k: int = 20
    track_test: bool = False
    exclude_validation: bool = True
    deterministic: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.l2 < 0:
            raise ConfigError("l2 must be >= 0")
        if self.reg_mode not in REG_MODES:
            raise ConfigError(f"reg_mode must be one of {REG_MODES}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def bpr_loss(
    y_pos: np.ndarray,
    y_neg: np.ndarray,
    params: ModelParams | None = None,
    l2: float = 0.0,
    reg_mode: str = "all-params",
    batch_rows: tuple[np.ndarray, ...] | None = None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean ``-ln sigmoid(y_pos - y_neg)`` plus the L2 penalty.

    Returns ``(loss, dloss/dy_pos, dloss/dy_neg)``. The penalty is
    ``l2 * ||theta||^2`` over every parameter tensor (``all-params``), or
    ``l2 * sum of squared final representations / B`` over the rows in
    ``batch_rows`` (``batch-embeddings``). Penalty gradients are added by
    :func:`batch_loss_and_grads`, not returned here.
    """
    y_pos = np.asarray(y_pos, dtype=np.float64)
    y_neg = np.asarray(y_neg, dtype=np.float64)
    if y_pos.shape != y_neg.shape:
        raise ValueError("score arrays differ in length")
    if not (np.all(np.isfinite(y_pos)) and np.all(np.isfinite(y_neg))):
        raise DivergenceError("non-finite scores in BPR loss")
    B = len(y_pos)
    x = y_pos - y_neg
    loss = float(np.mean(softplus(-x)))
    # 1 - sigmoid(x) = sigmoid(-x)
    g = np.exp(-np.logaddexp(0.0, x)) / B
    if l2:
        if reg_mode == "all-params":
            if params is None:
                raise ValueError("all-params regularisation needs params")
            loss += l2 * sum(float(np.sum(np.square(t, dtype=np.float64))) for t in params.tensors().values())
        elif reg_mode == "batch-embeddings":
            if batch_rows is None:
                raise ValueError("batch-embeddings regularisation needs batch_rows")
            loss += l2 * sum(float(np.sum(np.square(r, dtype=np.float64))) for r in batch_rows) / B
        else:
            raise ValueError(f"unknown reg_mode {reg_mode!r}")
    return loss, -g, g


def l2_gradients(params: ModelParams, l2: float) -> dict[str, np.ndarray]:
    return {k: (2.0 * l2) * v for k, v in params.tensors().items()}


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig) -> AdamState:
    """In-place bias-corrected Adam update of every tensor in ``params``."""
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, theta in params.tensors().items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        theta -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
    return state


def batch_loss_and_grads(
    params: ModelParams,
    lap: NormalizedLaplacian,
    cfg: ModelConfig,
    batch: BprBatch,
    l2: float,
    reg_mode: str,
    rng: np.random.Generator | None,
    need_grads: bool = True,
):
    """Loss of one triple batch through the full pipeline, and its parameter gradients."""
    trace = forward(params, lap, cfg, "train", rng)
    estar = trace.estar
    n = lap.n_users
    eu, ei, ej = estar[batch.users], estar[n + batch.pos], estar[n + batch.neg]
    y_pos = np.einsum("bd,bd->b", eu, ei)
    y_neg = np.einsum("bd,bd->b", eu, ej)
    rows = (eu, ei, ej) if reg_mode == "batch-embeddings" else None
    loss, d_pos, d_neg = bpr_loss(y_pos, y_neg, params, l2, reg_mode, rows)
    if not need_grads:
        return loss, None
    dt = estar.dtype
    d_pos = d_pos.astype(dt)[:, None]
    d_neg = d_neg.astype(dt)[:, None]
    parts = [d_pos * ei + d_neg * ej, d_pos * eu, d_neg * eu]
    if l2 and reg_mode == "batch-embeddings":
        scale = dt.type(2.0 * l2 / len(batch.users))
        parts = [parts[0] + scale * eu, parts[1] + scale * ei, parts[2] + scale * ej]
    index = np.concatenate([batch.users, n + batch.pos, n + batch.neg])
    grad_estar = scatter_add_rows(estar.shape[0], index, np.concatenate(parts))
    grads = backward(trace, grad_estar, params, cfg)
    if l2 and reg_mode == "all-params":
        for k, g in l2_gradients(params, l2).items():
            grads[k] = grads[k] + g
    return loss, grads


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    n_batches: int


def train_epoch(
    params: ModelParams,
    ds: InteractionDataset,
    lap: NormalizedLaplacian,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    state: AdamState,
    sampling_rng: np.random.Generator,
    dropout_rng: np.random.Generator,
    sampler: TripleSampler | None = None,
    epoch: int = 0,
) -> EpochStats:
    sampler = sampler or TripleSampler(ds)
    n_batches = math.ceil(ds.n_train / train_cfg.batch_size)
    total = 0.0
    for b in range(n_batches):
        batch = sampler.sample(train_cfg.batch_size, sampling_rng)
        try:
            loss, grads = batch_loss_and_grads(
                params, lap, model_cfg, batch, train_cfg.l2, train_cfg.reg_mode, dropout_rng
            )
        except DivergenceError as exc:
            raise DivergenceError(f"epoch {epoch}, batch {b}: {exc}", layer=exc.layer, batch=b) from exc
        adam_step(params, grads, state, train_cfg)
        total += loss
    return EpochStats(epoch, total / n_batches, n_batches)


@contextlib.contextmanager
def deterministic_threads(enabled: bool):
    """Pin BLAS to one thread so dense products are reduced in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield




@dataclass
class FitResult:
    best: Checkpoint
    best_epoch: int
    best_val_recall: float
    curve: list[dict]
    epochs_run: int

    def write_curve(self, path: str | Path) -> None:
        write_curve(self.curve, path)


def write_curve(curve: list[dict], path: str | Path) -> None:
    fields: list[str] = []
    for row in curve:
        fields += [k for k in row if k not in fields]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in curve:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def fit(
    params: ModelParams,
    ds: InteractionDataset,
    lap: NormalizedLaplacian,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    config_echo: dict | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> FitResult:
    """Train until validation recall@K stops improving for more than ``patience`` epochs.

    ``params`` is updated in place; the returned checkpoint holds a copy of
    the best-validation parameters. In deterministic mode ``elapsed_s`` is
    written as 0 so the curve file is reproducible byte for byte.
    """
    sampling_rng = make_rng(train_cfg.seed, "sampling")
    dropout_rng = make_rng(train_cfg.seed, "dropout")
    sampler = TripleSampler(ds)
    state = AdamState()
    k = train_cfg.stop_k
    best_val, best_epoch, bad = -np.inf, 0, 0
    best = Checkpoint(params.copy(), config_echo or {}, 0)
    curve: list[dict] = []
    start = time.perf_counter()
    epoch = 0
    with deterministic_threads(train_cfg.deterministic):
        for epoch in range(1, train_cfg.max_epochs + 1):
            stats = train_epoch(params, ds, lap, model_cfg, train_cfg, state, sampling_rng, dropout_rng, sampler, epoch)
            estar = forward(params, lap, model_cfg, "eval").estar
            val = evaluate_all(estar, ds, (k,), "validation", with_groups=False)
            row = {
                "epoch": epoch,
                "train_loss": stats.mean_loss,
                f"val_recall@{k}": val.recall(k),
                f"val_ndcg@{k}": val.ndcg(k),
            }
            if train_cfg.track_test:
                test = evaluate_all(estar, ds, (k,), "test", train_cfg.exclude_validation, with_groups=False)
                row[f"test_recall@{k}"] = test.recall(k)
                row[f"test_ndcg@{k}"] = test.ndcg(k)
            row["elapsed_s"] = 0.0 if train_cfg.deterministic else round(time.perf_counter() - start, 3)
            curve.append(row)
            if on_epoch:
                on_epoch(row)
            if val.recall(k) > best_val:
                best_val, best_epoch, bad = val.recall(k), epoch, 0
                best = Checkpoint(params.copy(), config_echo or {}, epoch, sampling_rng.bit_generator.state)
            else:
                bad += 1
                if bad > train_cfg.patience:
                    break
    return FitResult(best, best_epoch, float(best_val), curve, epoch)


@dataclass
class GradCheckReport:
    variant: str
    seed: int
    rel_errors: dict[str, float]
    tol: float = 1e-4

    @property
    def max_rel_error(self) -> float:
        return max(self.rel_errors.values())

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} variant={self.variant} seed={self.seed} max_rel_err={self.max_rel_error:.3e}"


def random_graph(n_users: int, n_items: int, rng: np.random.Generator, density: float = 0.3) -> np.ndarray:
    """Random 0/1 user x item matrix where every user and item has an interaction."""
    R = rng.random((n_users, n_items)) < density
    for u in range(n_users):
        if not R[u].any():
            R[u, rng.integers(n_items)] = True
    for i in range(n_items):
        if not R[:, i].any():
            R[rng.integers(n_users), i] = True
    return R


def laplacian_from_matrix(R: np.ndarray) -> NormalizedLaplacian:
    n_users, n_items = R.shape
    u, i = np.nonzero(R)
    n = n_users + n_items
    A = SparseMatrix.from_coo(np.concatenate([u, n_users + i]), np.concatenate([n_users + i, u]), np.ones(2 * len(u)), (n, n))
    return build_laplacian(A, n_users)


def grad_check(
    cfg: ModelConfig | None = None,
    seed: int = 0,
    n_users: int = 7,
    n_items: int = 9,
    h: float = 1e-5,
    l2: float = 1e-2,
    reg_mode: str = "all-params",
    batch_size: int = 12,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients with central differences on a random float64 instance.

    Dropout masks and the node-dropped matrix are replayed from a fixed seed
    for every loss evaluation. The relative error of a tensor is
    ``||analytic - numeric|| / max(||analytic||, ||numeric||)``.
    """
    if cfg is None:
        cfg = ModelConfig(embed_dim=5, layer_dims=(5, 5, 5), variant="ngcf", msg_dropout=0.1, node_dropout=0.1)
    cfg = ModelConfig.from_dict({**cfg.to_dict(), "dtype": "float64"})
    rng = np.random.default_rng(seed)
    R = random_graph(n_users, n_items, rng)
    lap = laplacian_from_matrix(R)
    params = init_params(cfg, n_users, n_items, rng)
    # larger-than-Xavier embeddings keep the Hadamard term's gradients well above rounding noise
    params.E0[...] = rng.normal(0.0, 0.5, params.E0.shape)
    users = rng.integers(0, n_users, batch_size)
    pos = np.array([rng.choice(np.flatnonzero(R[u])) for u in users])
    neg = np.array([rng.choice(np.flatnonzero(~R[u])) if (~R[u]).any() else 0 for u in users])
    batch = BprBatch(users, pos, neg)
    dropout_seed = int(rng.integers(2**32))

    def loss_at(p: ModelParams, need_grads: bool = False):
        return batch_loss_and_grads(p, lap, cfg, batch, l2, reg_mode, np.random.default_rng(dropout_seed), need_grads)

    _, analytic = loss_at(params, need_grads=True)
    errors = {}
    for name, theta in params.tensors().items():
        numeric = np.zeros_like(theta)
        for idx in np.ndindex(theta.shape):
            orig = theta[idx]
            theta[idx] = orig + h
            up, _ = loss_at(params)
            theta[idx] = orig - h
            down, _ = loss_at(params)
            theta[idx] = orig
            numeric[idx] = (up - down) / (2 * h)
        a = analytic[name]
        denom = max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-12)
        errors[name] = float(np.linalg.norm(a - numeric) / denom)
    return GradCheckReport(cfg.variant, seed, errors, tol)


def gradcheck_config(variant: str, n_layers: int = 3, dim: int = 5) -> ModelConfig:
    return ModelConfig(
        embed_dim=dim,
        layer_dims=(dim,) * n_layers,
        variant=variant,
        msg_dropout=0.1,
        node_dropout=0.0 if variant == "pinsage" else 0.1,
        dtype="float64",
    )


def new_model(ds: InteractionDataset, model_cfg: ModelConfig, seed: int) -> ModelParams:
    return init_params(model_cfg, ds.n_users, ds.n_items, make_rng(seed, "init"))
