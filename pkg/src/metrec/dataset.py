"""MovieLens-style rating ingestion, implicit binarization and train/test splits."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, TextIO

import numpy as np

_log = logging.getLogger(__name__)

Format = Literal["ml1m", "csv"]
_DELIMS = {"ml1m": "::", "csv": ","}


class RatingsParseError(ValueError):
    def __init__(self, msg: str, line: int):
        self.line = line
        super().__init__(f"{msg} at line {line}")


@dataclass(frozen=True)
class Interaction:
    user_id: int
    item_id: int
    rating: float
    timestamp: int


def parse_ratings(stream: Iterable[str], fmt: Format = "ml1m") -> list[Interaction]:
    """Parse ``UserID::MovieID::Rating::Timestamp`` lines (or comma-separated with ``fmt="csv"``).

    Blank lines are skipped. A repeated (user, item) pair keeps the record with
    the larger timestamp (the later line on a tie); survivors stay in file order.
    """
    try:
        delim = _DELIMS[fmt]
    except KeyError:
        raise ValueError(f"unknown ratings format {fmt!r}") from None

    records: list[tuple[int, Interaction]] = []
    latest: dict[tuple[int, int], int] = {}
    dups = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(delim)
        if len(parts) != 4:
            raise RatingsParseError(f"expected 4 fields, got {len(parts)}", lineno)
        try:
            user, item = int(parts[0]), int(parts[1])
            rating = float(parts[2])
            ts = int(parts[3])
        except ValueError:
            raise RatingsParseError("malformed field", lineno) from None
        if user < 1 or item < 1:
            raise RatingsParseError("ids must be >= 1", lineno)
        if not (1.0 <= rating <= 5.0):
            raise RatingsParseError("rating out of range", lineno)
        rec = Interaction(user, item, rating, ts)
        key = (user, item)
        prev = latest.get(key)
        if prev is not None:
            dups += 1
            if records[prev][1].timestamp > ts:
                continue
            records[prev] = (records[prev][0], None)  # type: ignore[assignment]
        latest[key] = len(records)
        records.append((lineno, rec))
    if dups:
        _log.warning("resolved %d duplicate (user, item) records by latest timestamp", dups)
    return [rec for _, rec in records if rec is not None]


def read_ratings(path: str | Path, fmt: Format = "ml1m") -> list[Interaction]:
    with open(path, encoding="utf-8") as f:
        return parse_ratings(f, fmt)


@dataclass
class Dataset:
    """Interactions plus dense, ascending-order id remaps."""

    interactions: list[Interaction]
    user_index: dict[int, int]
    item_index: dict[int, int]

    @property
    def n_users(self) -> int:
        return len(self.user_index)

    @property
    def n_items(self) -> int:
        return len(self.item_index)

    @property
    def user_ids(self) -> list[int]:
        """External user ids ordered by internal id."""
        return sorted(self.user_index, key=self.user_index.__getitem__)

    @property
    def item_ids(self) -> list[int]:
        return sorted(self.item_index, key=self.item_index.__getitem__)


def build_dataset(interactions: list[Interaction]) -> Dataset:
    if not interactions:
        raise ValueError("cannot build a dataset from zero interactions")
    users = sorted({r.user_id for r in interactions})
    items = sorted({r.item_id for r in interactions})
    return Dataset(
        list(interactions),
        {u: i for i, u in enumerate(users)},
        {v: j for j, v in enumerate(items)},
    )


def binarize(ds: Dataset, threshold: float = 4.0) -> list[np.ndarray]:
    """Per internal user, the sorted internal item ids rated ``>= threshold``."""
    if not (1.0 <= threshold <= 5.0):
        raise ValueError(f"threshold must lie in [1, 5], got {threshold}")
    buckets: list[list[int]] = [[] for _ in range(ds.n_users)]
    for r in ds.interactions:
        if r.rating >= threshold:
            buckets[ds.user_index[r.user_id]].append(ds.item_index[r.item_id])
    return [np.array(sorted(b), dtype=np.int64) for b in buckets]


@dataclass
class ImplicitSplit:
    """Per-user sorted train/test positive item arrays (internal ids)."""

    train: list[np.ndarray]
    test: list[np.ndarray]
    n_items: int
    threshold: float | None = None
    seed: int | None = None
    _train_sets: list[frozenset] | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if len(self.train) != len(self.test):
            raise ValueError("train and test must cover the same users")
        for u, (tr, te) in enumerate(zip(self.train, self.test)):
            if np.intersect1d(tr, te).size:
                raise ValueError(f"user {u}: train and test positives overlap")
            if te.size and not tr.size:
                raise ValueError(f"user {u} has test positives but no train positives")

    @property
    def n_users(self) -> int:
        return len(self.train)

    def train_set(self, user: int) -> frozenset:
        if self._train_sets is None:
            self._train_sets = [frozenset(a.tolist()) for a in self.train]
        return self._train_sets[user]

    def n_train(self) -> int:
        return int(sum(a.size for a in self.train))

    def eval_users(self) -> list[int]:
        return [u for u, te in enumerate(self.test) if te.size]


def _n_train(n: int, ratio: float) -> int:
    if n < 2:
        return n
    return min(n - 1, max(1, math.floor(ratio * n + 0.5)))


def split_train_test(
    positives: list[np.ndarray], ratio: float = 0.8, seed: int = 0, n_items: int | None = None,
    threshold: float | None = None,
) -> ImplicitSplit:
    """Seeded per-user holdout; ``ratio`` is the train fraction.

    Users with fewer than two positives keep everything in train. Otherwise the
    train share is ``round(ratio * n)`` clamped so both sides are nonempty.
    """
    if not (0.0 < ratio < 1.0):
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    if n_items is None:
        n_items = 1 + max((int(p.max()) for p in positives if p.size), default=-1)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for pos in positives:
        pos = np.asarray(pos, dtype=np.int64)
        perm = rng.permutation(pos) if pos.size >= 2 else pos
        k = _n_train(pos.size, ratio)
        train.append(np.sort(perm[:k]))
        test.append(np.sort(perm[k:]))
    return ImplicitSplit(train, test, n_items, threshold, seed)


@dataclass(frozen=True)
class FeatureSpec:
    """One-hot id features: user inputs have dim ``n1``, item inputs ``n2``."""

    n1: int
    n2: int
    mode: str = "one_hot_id"


def feature_vector(spec: FeatureSpec, internal_id: int, side: Literal["user", "item"]) -> np.ndarray:
    n = {"user": spec.n1, "item": spec.n2}[side]
    if not (0 <= internal_id < n):
        raise IndexError(f"{side} id {internal_id} out of range [0, {n})")
    x = np.zeros(n)
    x[internal_id] = 1.0
    return x


# -- split manifest ---------------------------------------------------------


def write_manifest(ds: Dataset, split: ImplicitSplit, out: TextIO) -> int:
    """Write ``user<TAB>item<TAB>train|test`` lines sorted by external ids."""
    users = ds.user_ids
    items = ds.item_ids
    rows = []
    for u, ext_u in enumerate(users):
        for part, arr in (("train", split.train[u]), ("test", split.test[u])):
            rows.extend((ext_u, items[j], part) for j in arr.tolist())
    rows.sort()
    for ext_u, ext_i, part in rows:
        out.write(f"{ext_u}\t{ext_i}\t{part}\n")
    return len(rows)


def read_manifest(ds: Dataset, stream: Iterable[str]) -> ImplicitSplit:
    """Rebuild an :class:`ImplicitSplit` over ``ds``'s id space from a manifest."""
    train: list[list[int]] = [[] for _ in range(ds.n_users)]
    test: list[list[int]] = [[] for _ in range(ds.n_users)]
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[2] not in ("train", "test"):
            raise RatingsParseError("malformed manifest row", lineno)
        try:
            u = ds.user_index[int(parts[0])]
            i = ds.item_index[int(parts[1])]
        except (KeyError, ValueError):
            raise RatingsParseError("manifest id not in ratings file", lineno) from None
        (train if parts[2] == "train" else test)[u].append(i)
    return ImplicitSplit(
        [np.array(sorted(t), dtype=np.int64) for t in train],
        [np.array(sorted(t), dtype=np.int64) for t in test],
        ds.n_items,
    )
