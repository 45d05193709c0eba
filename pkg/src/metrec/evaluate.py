"""Distance ranking and Precision@K / Recall@K over a split."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence, TextIO

import numpy as np

from . import kernels
from .dataset import ImplicitSplit


class Scorer(Protocol):
    """Anything that scores every item for a user; lower is better."""

    n_items: int

    def score_all(self, user: int) -> np.ndarray: ...


class EmbeddingScorer:
    """Ranks items by Euclidean distance between fixed user and item embeddings."""

    def __init__(self, user_emb: np.ndarray, item_emb: np.ndarray):
        self.user_emb = np.ascontiguousarray(user_emb, dtype=np.float64)
        self.item_emb = np.ascontiguousarray(item_emb, dtype=np.float64)
        self.n_items = self.item_emb.shape[0]

    def score_all(self, user: int) -> np.ndarray:
        return kernels.row_distances(self.user_emb[user], self.item_emb)


def model_scorer(model) -> EmbeddingScorer:
    """Embeds every user and item once; towers are fixed during evaluation."""
    return EmbeddingScorer(model.user_embeddings(), model.item_embeddings())


def score_user(scorer, user: int, candidates: Sequence[int]) -> np.ndarray:
    """Distance (or score) for each candidate item, in candidate order."""
    if not isinstance(scorer, EmbeddingScorer) and hasattr(scorer, "user_embeddings"):
        scorer = model_scorer(scorer)
    cand = np.asarray(candidates, dtype=np.int64)
    if cand.size and (cand.min() < 0 or cand.max() >= scorer.n_items):
        raise IndexError(f"candidate item out of range [0, {scorer.n_items})")
    return scorer.score_all(user)[cand]


@dataclass
class RankedList:
    user: int
    items: np.ndarray
    scores: np.ndarray


def top_k(scores: np.ndarray, k: int, exclusions: Iterable[int] = (), user: int = -1) -> RankedList:
    """The ``k`` lowest-scoring non-excluded items; ties go to the lower item id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    excluded = np.zeros(scores.size, dtype=bool)
    ex = np.fromiter(exclusions, dtype=np.int64)
    excluded[ex] = True
    idx = kernels.topk_indices(scores, int(k), excluded)
    return RankedList(user, idx, scores[idx])


def hits_at_k(ranked: RankedList | Sequence[int], relevant, k: int) -> int:
    items = ranked.items if isinstance(ranked, RankedList) else ranked
    rel = relevant if isinstance(relevant, (set, frozenset)) else set(np.asarray(relevant).tolist())
    return sum(1 for i in list(items)[:k] if int(i) in rel)


def precision_at_k(ranked, relevant, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    return hits_at_k(ranked, relevant, k) / k


def recall_at_k(ranked, relevant, k: int) -> float:
    """Undefined (NaN) for an empty relevant set; such users are skipped when averaging."""
    if k < 1:
        raise ValueError("k must be >= 1")
    n_rel = len(relevant)
    if n_rel == 0:
        return float("nan")
    return hits_at_k(ranked, relevant, k) / n_rel


class NoEvaluableUsersError(ValueError):
    pass


@dataclass
class MetricsReport:
    precision: dict[int, float]
    recall: dict[int, float]
    n_eval_users: int
    config_hash: str = ""
    seed: int | None = None
    hits: dict[int, dict[int, int]] = field(default_factory=dict, repr=False)

    def rows(self) -> list[tuple[str, int, float, int]]:
        out = [("precision", k, v, self.n_eval_users) for k, v in sorted(self.precision.items())]
        out += [("recall", k, v, self.n_eval_users) for k, v in sorted(self.recall.items())]
        return out

    def write_csv(self, f: TextIO) -> None:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["metric", "k", "value", "n_users"])
        for metric, k, v, n in self.rows():
            w.writerow([metric, k, repr(v), n])

    def to_json(self) -> str:
        payload = {
            "rows": [
                {"metric": m, "k": k, "value": v, "n_users": n} for m, k, v, n in self.rows()
            ],
            "config_hash": self.config_hash,
            "seed": self.seed,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def rank_user(scorer, split: ImplicitSplit, user: int, k: int) -> RankedList:
    """Top-``k`` over all items minus the user's train positives."""
    scores = np.ascontiguousarray(scorer.score_all(user), dtype=np.float64)
    excluded = np.zeros(scores.size, dtype=bool)
    excluded[split.train[user]] = True
    idx = kernels.topk_indices(scores, int(k), excluded)
    return RankedList(user, idx, scores[idx])


def evaluate(scorer, split: ImplicitSplit, ks: Sequence[int] = (5, 10, 20),
             config_hash: str = "", seed: int | None = None) -> MetricsReport:
    """Macro-averaged Precision@K and Recall@K over users with test positives.

    ``scorer`` is a :class:`Scorer` or a trained model.
    """
    if not ks or any(k < 1 for k in ks):
        raise ValueError("ks must be a nonempty list of positive integers")
    if hasattr(scorer, "user_embeddings"):
        scorer = model_scorer(scorer)
    users = split.eval_users()
    if not users:
        raise NoEvaluableUsersError("no users with test positives")
    ks = sorted(set(int(k) for k in ks))
    kmax = ks[-1]
    hits: dict[int, dict[int, int]] = {}
    prec = {k: 0.0 for k in ks}
    rec = {k: 0.0 for k in ks}
    for u in users:
        ranked = rank_user(scorer, split, u, kmax)
        test = split.test[u]
        found = np.isin(ranked.items, test)
        cum = np.cumsum(found)
        row = {}
        for k in ks:
            h = int(cum[min(k, cum.size) - 1]) if cum.size else 0
            row[k] = h
            prec[k] += h / k
            rec[k] += h / test.size
        hits[u] = row
    n = len(users)
    return MetricsReport(
        {k: prec[k] / n for k in ks}, {k: rec[k] / n for k in ks}, n, config_hash, seed, hits
    )
