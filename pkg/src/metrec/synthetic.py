"""Planted two-cluster interaction data with a balanced holdout.

Users and items are split into clusters by id parity, so item-id order alone
carries no cluster information. Every user is positive on all items of the
matching cluster. Within a cluster, user ``r`` holds out the items of rank
``r, r+1, ..., r+h-1`` (mod cluster size); each item is therefore held out by
exactly ``h`` users and all items end up with the same train count.
"""
from __future__ import annotations

import math

import numpy as np

from .dataset import ImplicitSplit, Interaction


def planted_split(n_users: int = 40, n_items: int = 40, n_clusters: int = 2, holdout: float = 0.2) -> ImplicitSplit:
    if n_users % n_clusters or n_items % n_clusters:
        raise ValueError("cluster count must divide both user and item counts")
    per_cluster = n_items // n_clusters
    h = int(round(holdout * per_cluster))
    if not (1 <= h < per_cluster):
        raise ValueError("holdout must leave both sides nonempty")
    train, test = [], []
    for u in range(n_users):
        c, r = u % n_clusters, u // n_clusters
        ranks = np.arange(per_cluster)
        held = (ranks - r) % per_cluster < h
        items = ranks * n_clusters + c
        train.append(np.sort(items[~held]))
        test.append(np.sort(items[held]))
    return ImplicitSplit(train, test, n_items)


def planted_ratings(n_users: int = 40, n_items: int = 40, n_clusters: int = 2) -> list[Interaction]:
    """The planted positives as 5-star ratings with external ids starting at 1."""
    out = []
    for u in range(n_users):
        for i in range(u % n_clusters, n_items, n_clusters):
            out.append(Interaction(u + 1, i + 1, 5.0, 1_000_000 + len(out)))
    return out


def chance_recall_at_k(split: ImplicitSplit, k: int) -> float:
    """Expected macro Recall@k when each user's candidates are ranked uniformly at random.

    Candidates are all items minus train positives. Computed by summing the
    hypergeometric distribution of hits.
    """
    total = 0.0
    users = split.eval_users()
    for u in users:
        n_cand = split.n_items - split.train[u].size
        n_rel = split.test[u].size
        draw = min(k, n_cand)
        denom = math.comb(n_cand, draw)
        expected = sum(
            h * math.comb(n_rel, h) * math.comb(n_cand - n_rel, draw - h)
            for h in range(0, min(n_rel, draw) + 1)
        ) / denom
        total += expected / n_rel
    return total / len(users)
