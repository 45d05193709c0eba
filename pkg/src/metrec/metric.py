"""Euclidean distance and the margin triplet loss."""
from __future__ import annotations

import math

import numpy as np

from .mlp import DimensionError

DEGENERATE_DIST = 1e-12
DEFAULT_MARGIN = 1.0


def check_margin(m: float) -> float:
    m = float(m)
    if not (math.isfinite(m) and m >= 0.0):
        raise ValueError(f"margin must be finite and >= 0, got {m}")
    return m


def euclidean_distance(h_u: np.ndarray, h_v: np.ndarray) -> float:
    if h_u.shape != h_v.shape:
        raise DimensionError("distance operands", h_u.shape[0], h_v.shape[0])
    diff = h_u - h_v
    return math.sqrt(float(diff @ diff))


def _unit(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    # (x - y) / ||x - y||, or zero when the points coincide
    diff = x - y
    d = math.sqrt(float(diff @ diff))
    if d < DEGENERATE_DIST:
        return np.zeros_like(diff), d
    return diff / d, d


def _check_triplet(h_a, h_p, h_n):
    if h_p.shape != h_a.shape:
        raise DimensionError("positive embedding", h_a.shape[0], h_p.shape[0])
    if h_n.shape != h_a.shape:
        raise DimensionError("negative embedding", h_a.shape[0], h_n.shape[0])


def triplet_loss(h_a: np.ndarray, h_p: np.ndarray, h_n: np.ndarray, m: float = DEFAULT_MARGIN) -> float:
    """``max(0, d(a, p) - d(a, n) + m)``."""
    _check_triplet(h_a, h_p, h_n)
    m = check_margin(m)
    return max(0.0, euclidean_distance(h_a, h_p) - euclidean_distance(h_a, h_n) + m)


def triplet_loss_grads(
    h_a: np.ndarray, h_p: np.ndarray, h_n: np.ndarray, m: float = DEFAULT_MARGIN
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of :func:`triplet_loss` w.r.t. anchor, positive and negative.

    All zero when the hinge argument is <= 0.
    """
    _check_triplet(h_a, h_p, h_n)
    m = check_margin(m)
    u_ap, d_ap = _unit(h_a, h_p)
    u_an, d_an = _unit(h_a, h_n)
    if d_ap - d_an + m <= 0.0:
        z = np.zeros_like(h_a, dtype=np.float64)
        return z, z.copy(), z.copy()
    return u_ap - u_an, -u_ap, u_an
