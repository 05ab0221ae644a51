"""Embedding propagation over the user-item graph with a hand-written backward pass.

Layer rules (row-vector convention, ``X = E^(l-1)``, ``S`` the possibly
node-dropped Laplacian):

* ``ngcf``:    ``LeakyReLU((S + I) X W1 + ((S X) * X) W2)``
* ``gcmc`` / ``pinsage``: ``LeakyReLU((S + I) X W1)``
* ``svdpp``:   ``X + C X`` with a coefficient matrix ``C`` derived from ``S``
  (one layer, no weights, no activation)
* ``mf``:      no layers; the final representation is ``E^(0)``

Message dropout multiplies each layer output by an inverted-dropout mask
before it is concatenated and fed to the next layer.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, ShapeError
from .graph import NormalizedLaplacian, drop_nodes, sample_dropped_nodes
from .numeric import (
    SparseMatrix,
    check_finite,
    dropout_mask,
    hadamard,
    leaky_relu,
    leaky_relu_grad,
    matmul,
    spmm,
    xavier_init,
)

log = logging.getLogger(__name__)

VARIANTS = ("ngcf", "svdpp", "gcmc", "pinsage", "mf")
SVDPP_USER_COEFS = ("laplacian", "user_degree")
SVDPP_ITEM_COEFS = ("laplacian", "zero")


@dataclass
class ModelConfig:
    embed_dim: int = 64
    layer_dims: tuple[int, ...] = (64, 64, 64)
    variant: str = "ngcf"
    leaky_slope: float = 0.2
    msg_dropout: float = 0.1
    node_dropout: float = 0.0
    include_layer0: bool = True
    # svdpp only: neighbour coefficients on the user side and the item side
    svdpp_user_coef: str = "laplacian"
    svdpp_item_coef: str = "laplacian"
    dtype: str = "float32"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if self.variant == "mf":
            self.layer_dims = ()
        elif self.variant == "svdpp":
            self.layer_dims = (self.embed_dim,)
        elif self.variant == "pinsage" and self.node_dropout:
            log.warning("pinsage variant uses message dropout only; ignoring node_dropout=%s", self.node_dropout)
            self.node_dropout = 0.0
        if self.embed_dim < 1 or any(d < 1 for d in self.layer_dims):
            raise ConfigError("embedding and layer dimensions must be >= 1")
        for name in ("msg_dropout", "node_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.svdpp_user_coef not in SVDPP_USER_COEFS or self.svdpp_item_coef not in SVDPP_ITEM_COEFS:
            raise ConfigError("invalid svdpp coefficient mode")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.embed_dim, *self.layer_dims)

    @property
    def weight_slots(self) -> tuple[str, ...]:
        if self.variant == "ngcf":
            return ("W1", "W2")
        if self.variant in ("gcmc", "pinsage"):
            return ("W1",)
        return ()

    @property
    def output_dim(self) -> int:
        if self.variant == "svdpp":
            return self.embed_dim
        return (self.embed_dim if self.include_layer0 or not self.layer_dims else 0) + sum(self.layer_dims)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_dims"] = list(self.layer_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class ModelParams:
    """Embedding table ``E0`` (users then items) plus per-layer weights.

    ``W1[l]`` / ``W2[l]`` have shape ``(d_{l-1}, d_l)``; variants that do
    not use a slot keep an empty list for it.
    """

    E0: np.ndarray
    W1: list[np.ndarray] = field(default_factory=list)
    W2: list[np.ndarray] = field(default_factory=list)

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"E0": self.E0}
        for l in range(max(len(self.W1), len(self.W2))):
            if l < len(self.W1):
                out[f"W1_{l + 1}"] = self.W1[l]
            if l < len(self.W2):
                out[f"W2_{l + 1}"] = self.W2[l]
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "ModelParams":
        def layer(prefix):
            keys = sorted((k for k in tensors if k.startswith(prefix + "_")), key=lambda k: int(k.split("_")[1]))
            return [tensors[k] for k in keys]

        return cls(tensors["E0"], layer("W1"), layer("W2"))

    def copy(self) -> "ModelParams":
        return ModelParams.from_tensors({k: v.copy() for k, v in self.tensors().items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams.from_tensors({k: v.astype(dtype) for k, v in self.tensors().items()})

    def check(self, cfg: ModelConfig, n_nodes: int) -> None:
        if self.E0.shape != (n_nodes, cfg.embed_dim):
            raise ShapeError(f"E0 has shape {self.E0.shape}, expected {(n_nodes, cfg.embed_dim)}")
        dims = cfg.dims
        for slot in ("W1", "W2"):
            ws = getattr(self, slot)
            expected = cfg.n_layers if slot in cfg.weight_slots else 0
            if len(ws) != expected:
                raise ShapeError(f"{slot}: {len(ws)} matrices, expected {expected} for variant {cfg.variant}")
            for l, w in enumerate(ws):
                if w.shape != (dims[l], dims[l + 1]):
                    raise ShapeError(f"{slot}_{l + 1} has shape {w.shape}, expected {(dims[l], dims[l + 1])}")


def init_params(cfg: ModelConfig, n_users: int, n_items: int, rng: np.random.Generator) -> ModelParams:
    dt = cfg.np_dtype
    E0 = xavier_init(n_users + n_items, cfg.embed_dim, rng, dt)
    dims = cfg.dims
    W1, W2 = [], []
    for l in range(cfg.n_layers):
        if "W1" in cfg.weight_slots:
            W1.append(xavier_init(dims[l], dims[l + 1], rng, dt))
        if "W2" in cfg.weight_slots:
            W2.append(xavier_init(dims[l], dims[l + 1], rng, dt))
    return ModelParams(E0, W1, W2)


def param_count(cfg: ModelConfig, n_users: int, n_items: int) -> tuple[int, int]:
    """(embedding-table size, additional propagation weights)."""
    base = cfg.embed_dim * (n_users + n_items)
    dims = cfg.dims
    per_layer = len(cfg.weight_slots)
    extra = sum(per_layer * dims[l] * dims[l + 1] for l in range(cfg.n_layers))
    return base, extra


def svdpp_coefficients(lap: NormalizedLaplacian, cfg: ModelConfig) -> SparseMatrix:
    """Neighbour coefficients for the one-layer SVD++-style variant.

    User rows hold ``p_ui'`` (Laplacian norm, or ``1/sqrt(|N_u|)``); item rows
    hold ``p_iu'`` (Laplacian norm, or 0, which gives the FISM-style form).
    """
    S = lap.lap
    rows = S.row_ids()
    values = S.values.copy()
    user_rows = rows < lap.n_users
    if cfg.svdpp_user_coef == "user_degree":
        values[user_rows] = 1.0 / np.sqrt(lap.degrees[rows[user_rows]])
    keep = np.ones(S.nnz, dtype=bool)
    if cfg.svdpp_item_coef == "zero":
        keep = user_rows
    return SparseMatrix.from_coo(rows[keep], S.col_indices[keep], values[keep], S.shape)


@dataclass
class LayerCache:
    X: np.ndarray
    H: np.ndarray
    Z: np.ndarray
    P: np.ndarray | None
    mask: np.ndarray | None


@dataclass
class ForwardTrace:
    mode: str
    outputs: list[np.ndarray]
    estar: np.ndarray
    layers: list[LayerCache] = field(default_factory=list)
    S: SparseMatrix | None = None
    S_T: SparseMatrix | None = None


def _propagation_matrix(lap: NormalizedLaplacian, cfg: ModelConfig, train: bool, rng):
    S = svdpp_coefficients(lap, cfg) if cfg.variant == "svdpp" else lap.lap
    if train and cfg.node_dropout > 0:
        if rng is None:
            raise ValueError("train-mode forward with node dropout needs an rng")
        dropped = sample_dropped_nodes(S.n_rows, cfg.node_dropout, rng)
        if dropped.any():
            S = drop_nodes(S, dropped, 1.0 / (1.0 - cfg.node_dropout))
    # the Laplacian and any row/column drop of it stay symmetric
    S_T = S.transpose() if cfg.variant == "svdpp" else S
    return S, S_T


def layer_forward(cfg: ModelConfig, S: SparseMatrix, X: np.ndarray, W1, W2):
    """One propagation step; returns ``(H, P, Z, Y)`` with ``Y`` the activated output."""
    H = spmm(S, X)
    if cfg.variant == "svdpp":
        Z = X + H
        return H, None, Z, Z
    Z = matmul(H + X, W1)
    P = None
    if cfg.variant == "ngcf":
        P = hadamard(H, X)
        Z += matmul(P, W2)
    return H, P, Z, leaky_relu(Z, cfg.leaky_slope)


def forward(
    params: ModelParams,
    lap: NormalizedLaplacian,
    cfg: ModelConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> ForwardTrace:
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    params.check(cfg, lap.n_nodes)
    train = mode == "train"
    S, S_T = _propagation_matrix(lap, cfg, train, rng)
    dt = params.E0.dtype
    X = params.E0
    outputs = [X]
    layers: list[LayerCache] = []
    for l in range(cfg.n_layers):
        W1 = params.W1[l] if params.W1 else None
        W2 = params.W2[l] if params.W2 else None
        H, P, Z, Y = layer_forward(cfg, S, X, W1, W2)
        mask = None
        if train and cfg.msg_dropout > 0:
            mask = dropout_mask(Y.shape[0], Y.shape[1], cfg.msg_dropout, rng, dt)
            E = Y * mask
        else:
            E = Y
        check_finite(E, "layer output", layer=l + 1)
        if train:
            layers.append(LayerCache(X, H, Z, P, mask))
        outputs.append(E)
        X = E
    estar = _concat(outputs, cfg)
    if not train:
        return ForwardTrace(mode, outputs, estar)
    return ForwardTrace(mode, outputs, estar, layers, S, S_T)


def _concat_range(cfg: ModelConfig) -> range:
    if cfg.variant == "svdpp":
        return range(1, 2)
    if cfg.n_layers == 0 or cfg.include_layer0:
        return range(0, cfg.n_layers + 1)
    return range(1, cfg.n_layers + 1)


def _concat(outputs: list[np.ndarray], cfg: ModelConfig) -> np.ndarray:
    parts = [outputs[l] for l in _concat_range(cfg)]
    return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)


def final_embeddings(params: ModelParams, lap: NormalizedLaplacian, cfg: ModelConfig) -> np.ndarray:
    return forward(params, lap, cfg, "eval").estar


def backward(trace: ForwardTrace, grad_estar: np.ndarray, params: ModelParams, cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every tensor in ``params.tensors()``.

    ``trace`` must come from a train-mode forward on the same parameters;
    the node-dropped matrix and dropout masks stored in it are reused.
    """
    if trace.mode != "train":
        raise ValueError("backward needs a train-mode trace")
    if grad_estar.shape != trace.estar.shape:
        raise ShapeError(f"grad_estar has shape {grad_estar.shape}, expected {trace.estar.shape}")
    L = cfg.n_layers
    G: list[np.ndarray | None] = [None] * (L + 1)
    col = 0
    for l in _concat_range(cfg):
        width = trace.outputs[l].shape[1]
        G[l] = grad_estar[:, col : col + width].copy()
        col += width
    grads: dict[str, np.ndarray] = {}
    for l in range(L, 0, -1):
        cache = trace.layers[l - 1]
        dE = G[l] if G[l] is not None else np.zeros_like(trace.outputs[l])
        dY = dE * cache.mask if cache.mask is not None else dE
        if cfg.variant == "svdpp":
            dX = dY + spmm(trace.S_T, dY)
        else:
            dZ = dY * leaky_relu_grad(cache.Z, cfg.leaky_slope)
            A = cache.H + cache.X
            W1 = params.W1[l - 1]
            grads[f"W1_{l}"] = matmul(A.T, dZ)
            dA = matmul(dZ, W1.T)
            dH = dA
            dX = dA.copy()
            if cfg.variant == "ngcf":
                W2 = params.W2[l - 1]
                grads[f"W2_{l}"] = matmul(cache.P.T, dZ)
                dP = matmul(dZ, W2.T)
                dH = dA + dP * cache.X
                dX += dP * cache.H
            dX += spmm(trace.S_T, dH)
        G[l - 1] = dX if G[l - 1] is None else G[l - 1] + dX
    grads["E0"] = G[0] if G[0] is not None else np.zeros_like(params.E0)
    return {k: grads[k] for k in params.tensors()}


def predict(estar: np.ndarray, u: int, i: int, n_users: int) -> float:
    """Inner-product preference of user ``u`` for item ``i``."""
    n_items = estar.shape[0] - n_users
    if not (0 <= u < n_users and 0 <= i < n_items):
        raise IndexError(f"(u={u}, i={i}) outside {n_users} users x {n_items} items")
    return float(np.dot(estar[u], estar[n_users + i]))


def score_matrix(estar: np.ndarray, n_users: int, users: np.ndarray | None = None) -> np.ndarray:
    U = estar[:n_users] if users is None else estar[users]
    return U @ estar[n_users:].T


def with_config(cfg: ModelConfig, **changes) -> ModelConfig:
    return replace(cfg, **changes)


def export_embeddings(estar: np.ndarray, fh) -> None:
    """TSV rows ``node_id<TAB>v1<TAB>...``; users are nodes ``0..N-1``, items follow."""
    for node, row in enumerate(estar):
        fh.write("\t".join([str(node), *(format(float(v), ".9g") for v in row)]) + "\n")
