"""Slow, literal reference computations used only by the tests."""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def leaky(x, slope):
    return x if x >= 0 else slope * x


def per_node_propagation(R, E0, W1s, W2s, slope, variant="ngcf", include_layer0=True):
    """Edge-by-edge message construction and aggregation, one node at a time.

    ``R`` is a boolean user x item matrix; embeddings are row vectors, so a
    message is ``p_ui * (e_i W1 + (e_i * e_u) W2)``.
    """
    n_users, n_items = R.shape
    neigh = [[n_users + i for i in np.flatnonzero(R[u])] for u in range(n_users)]
    neigh += [[u for u in np.flatnonzero(R[:, i])] for i in range(n_items)]
    deg = [len(nb) for nb in neigh]
    layers = [np.array(E0, dtype=np.float64)]
    for W1, W2 in zip(W1s, W2s if W2s else [None] * len(W1s)):
        prev = layers[-1]
        out = np.zeros((prev.shape[0], W1.shape[1]))
        for a in range(prev.shape[0]):
            total = prev[a] @ W1  # self-connection message
            for b in neigh[a]:
                p = 1.0 / math.sqrt(deg[a] * deg[b])
                msg = prev[b] @ W1
                if variant == "ngcf":
                    msg = msg + (prev[b] * prev[a]) @ W2
                total = total + p * msg
            out[a] = [leaky(x, slope) for x in total]
        layers.append(out)
    parts = layers if include_layer0 or len(layers) == 1 else layers[1:]
    return np.concatenate(parts, axis=1)


def svdpp_score(R, E0, u, i, user_coef="laplacian", item_coef="laplacian"):
    """Direct evaluation of the one-layer neighbourhood-factor score for (u, i)."""
    n_users, _ = R.shape
    du = R.sum(axis=1)
    di = R.sum(axis=0)
    eu = E0[u].astype(np.float64).copy()
    for i2 in np.flatnonzero(R[u]):
        p = 1.0 / math.sqrt(du[u]) if user_coef == "user_degree" else 1.0 / math.sqrt(du[u] * di[i2])
        eu += p * E0[n_users + i2]
    ei = E0[n_users + i].astype(np.float64).copy()
    if item_coef != "zero":
        for u2 in np.flatnonzero(R[:, i]):
            ei += (1.0 / math.sqrt(du[u2] * di[i])) * E0[u2]
    return float(eu @ ei)


def dense_laplacian(R):
    n_users, n_items = R.shape
    A = np.zeros((n_users + n_items,) * 2)
    A[:n_users, n_users:] = R
    A[n_users:, :n_users] = R.T
    d = A.sum(axis=1)
    Dm = np.diag(1.0 / np.sqrt(d))
    return Dm @ A @ Dm


def recall_exact(ranking, test) -> Fraction:
    return Fraction(sum(1 for x in ranking if x in test), len(test))


def ndcg_bruteforce(ranking, test) -> float:
    dcg = 0.0
    for r, x in enumerate(ranking):
        if x in test:
            dcg += 1.0 / math.log(r + 2, 2)
    ideal = 0.0
    for r in range(min(len(ranking), len(test))):
        ideal += 1.0 / math.log(r + 2, 2)
    return dcg / ideal


def full_sort_topk(scores, excluded, k):
    """Full ordering by (-score, index) with excluded items removed."""
    cand = [(-float(s), i) for i, s in enumerate(scores) if i not in excluded]
    cand.sort()
    return [i for _, i in cand[:k]]


def greedy_sparsity_bins(counts, n_groups=4):
    """Assign sorted users to bins by sweeping cumulative interaction mass."""
    total = sum(counts)
    bins = []
    cum = 0
    for c in counts:
        cum += c
        b = 0
        while Fraction(cum) > Fraction(total * (b + 1), n_groups):
            b += 1
        bins.append(min(b, n_groups - 1))
    return bins
