"""Seeded triplet sampling from the train side of a split."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .dataset import ImplicitSplit

MAX_REJECTIONS = 100


class NoValidTripletsError(ValueError):
    pass


class Triplet(NamedTuple):
    user: int
    pos_item: int
    neg_item: int


class TripletSampler:
    """Draws (user, positive, negative) triplets.

    Anchors are drawn uniformly over observed (user, train positive) pairs,
    i.e. proportionally to each user's positive count. Negatives are uniform
    over the items a user has not interacted with in train. Users whose
    positives cover every item never anchor.
    """

    def __init__(self, split: ImplicitSplit, seed: int = 0):
        self.split = split
        self.n_items = split.n_items
        self.rng = np.random.default_rng(seed)
        users, items = [], []
        for u, pos in enumerate(split.train):
            if 0 < pos.size < self.n_items:
                users.append(np.full(pos.size, u, dtype=np.int64))
                items.append(pos)
        if not users:
            raise NoValidTripletsError("no valid triplets")
        self.pair_users = np.concatenate(users)
        self.pair_items = np.concatenate(items)
        # sorted user*M+item keys for vectorized membership tests
        self._keys = np.sort(self.pair_users * self.n_items + self.pair_items)

    def _is_positive(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        q = users * self.n_items + items
        pos = np.searchsorted(self._keys, q)
        pos = np.minimum(pos, self._keys.size - 1)
        return self._keys[pos] == q

    def sample_batch(self, batch_size: int) -> list[Triplet]:
        users, pos, neg = self.sample_arrays(batch_size)
        return [Triplet(int(u), int(p), int(n)) for u, p, n in zip(users, pos, neg)]

    def sample(self) -> Triplet:
        return self.sample_batch(1)[0]

    def sample_arrays(self, batch_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Like :meth:`sample_batch` but returns three int64 arrays."""
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        rng = self.rng
        idx = rng.integers(0, self.pair_users.size, size=batch_size)
        users = self.pair_users[idx]
        pos = self.pair_items[idx]
        neg = rng.integers(0, self.n_items, size=batch_size)
        bad = np.flatnonzero(self._is_positive(users, neg))
        for _ in range(MAX_REJECTIONS):
            if not bad.size:
                break
            neg[bad] = rng.integers(0, self.n_items, size=bad.size)
            bad = bad[self._is_positive(users[bad], neg[bad])]
        for b in bad.tolist():
            # dense user: enumerate the complement explicitly
            comp = np.setdiff1d(np.arange(self.n_items), self.split.train[users[b]])
            neg[b] = comp[rng.integers(0, comp.size)]
        return users, pos, neg
