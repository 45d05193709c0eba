"""Non-learned reference rankers sharing the evaluator's lower-is-better convention."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .dataset import ImplicitSplit


class PopularityScorer:
    """Score is minus the item's train interaction count; identical for every user."""

    def __init__(self, split: ImplicitSplit):
        counts = np.zeros(split.n_items)
        for pos in split.train:
            np.add.at(counts, pos, 1.0)
        if not counts.any():
            raise ValueError("popularity needs a nonempty train side")
        self.counts = counts
        self.n_items = split.n_items
        self._scores = -counts

    def score_all(self, user: int) -> np.ndarray:
        return self._scores.copy()


class UserKnnScorer:
    """User-based KNN over binary train vectors with cosine similarity.

    ``score(item) = -sum(sim(u, v) for v in the top neighbours who have item)``.
    Neighbours are the ``k_neighbors`` most similar other users with positive
    similarity (ties to the lower user id). Users with no train positives fall
    back to popularity.
    """

    def __init__(self, split: ImplicitSplit, k_neighbors: int = 50):
        if k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        self.k = k_neighbors
        self.n_items = split.n_items
        rows = np.concatenate([np.full(p.size, u) for u, p in enumerate(split.train)])
        cols = np.concatenate(split.train)
        self.matrix = sp.csr_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(split.n_users, split.n_items)
        )
        self.norms = np.sqrt(np.asarray(self.matrix.sum(axis=1)).ravel())
        self._fallback = PopularityScorer(split)

    def similarities(self, user: int) -> np.ndarray:
        """Cosine similarity of ``user`` to every user (0 where either vector is empty)."""
        overlap = np.asarray((self.matrix @ self.matrix[user].T).todense()).ravel()
        denom = self.norms * self.norms[user]
        return np.divide(overlap, denom, out=np.zeros_like(overlap), where=denom > 0)

    def neighbors(self, user: int) -> tuple[np.ndarray, np.ndarray]:
        sims = self.similarities(user)
        sims[user] = 0.0
        cand = np.flatnonzero(sims > 0.0)
        order = np.lexsort((cand, -sims[cand]))[: self.k]
        nb = cand[order]
        return nb, sims[nb]

    def score_all(self, user: int) -> np.ndarray:
        if self.norms[user] == 0:
            return self._fallback.score_all(user)
        nb, sims = self.neighbors(user)
        return -np.asarray(self.matrix[nb].T @ sims).ravel()
