"""Pure numpy implementations of the hot kernels.

These are the fallback used when the compiled extension is unavailable or
``METREC_PURE=1`` is set. Signatures must stay identical to ``_ckernels.pyx``.
"""
from __future__ import annotations

import numpy as np

# Distances below this use the zero unit-direction convention.
DEGENERATE_DIST = 1e-12


def row_distances(u: np.ndarray, items: np.ndarray) -> np.ndarray:
    """Euclidean distance from ``u`` to every row of ``items``."""
    diff = items - u
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def topk_indices(scores: np.ndarray, k: int, excluded: np.ndarray) -> np.ndarray:
    """Indices of the ``k`` smallest non-excluded scores.

    Ties go to the smaller index.
    """
    cand = np.flatnonzero(~excluded)
    order = np.argsort(scores[cand], kind="stable")
    return cand[order[:k]].astype(np.int64)


def hinge_triplets(ha, hp, hn, margin: float):
    """Batched triplet hinge: losses and gradients w.r.t. the three embeddings."""
    dap_vec = ha - hp
    dan_vec = ha - hn
    dap = np.sqrt(np.einsum("ij,ij->i", dap_vec, dap_vec))
    dan = np.sqrt(np.einsum("ij,ij->i", dan_vec, dan_vec))
    arg = dap - dan + margin
    # NaN arguments count as active so they surface instead of vanishing
    active = ~(arg <= 0.0)
    loss = np.where(active, arg, 0.0)

    # unit directions a-p and a-n, zeroed when degenerate
    with np.errstate(invalid="ignore", divide="ignore"):
        up = np.where((dap >= DEGENERATE_DIST)[:, None], dap_vec / dap[:, None], 0.0)
        un = np.where((dan >= DEGENERATE_DIST)[:, None], dan_vec / dan[:, None], 0.0)
    mask = active[:, None]
    ga = np.where(mask, up - un, 0.0)
    gp = np.where(mask, -up, 0.0)
    gn = np.where(mask, un, 0.0)
    return loss, ga, gp, gn


def scatter_add_columns(target: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> None:
    """``target[:, idx[b]] += vals[b]`` for every b, in order."""
    np.add.at(target.T, idx, vals)


def adam_update(p, g, m, v, lr: float, beta1: float, beta2: float, eps: float, t: int) -> None:
    """In-place Adam step on one parameter array."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
