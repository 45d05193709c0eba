import math

import numpy as np
import pytest

from metrec.baselines import PopularityScorer, UserKnnScorer
from metrec.dataset import ImplicitSplit
from metrec.evaluate import evaluate, rank_user
from metrec.synthetic import chance_recall_at_k, planted_split

from brute_force import random_split_lists


def as_split(train, n_items, test=None):
    arr = lambda xs: np.array(sorted(xs), dtype=np.int64)
    test = test or [[] for _ in train]
    return ImplicitSplit([arr(t) for t in train], [arr(t) for t in test], n_items)


def test_popularity_order():
    # item a=0 seen 5 times, b=1 twice
    split = as_split([[0, 1], [0, 1], [0], [0], [0]], 3)
    pop = PopularityScorer(split)
    for u in range(5):
        assert rank_user(pop, split, u, 3).items.tolist()[0] in (0, 1, 2)
    assert pop.score_all(0).tolist() == [-5.0, -2.0, 0.0]
    assert np.array_equal(pop.score_all(0), pop.score_all(4))


def test_popularity_equal_counts_is_id_order():
    split = as_split([[0], [1], [2], [3]], 4)
    assert rank_user(PopularityScorer(split), split, 0, 4).items.tolist() == [1, 2, 3]


def test_popularity_on_planted_data_is_exact_id_order():
    split = planted_split()
    pop = PopularityScorer(split)
    assert np.unique(pop.counts).tolist() == [16.0]
    # every item has the same count, so the ranking is id order; enumerate it
    total = 0.0
    for u in split.eval_users():
        cands = [i for i in range(40) if i not in set(split.train[u].tolist())]
        total += len(set(cands[:5]) & set(split.test[u].tolist())) / split.test[u].size
    assert evaluate(pop, split, [5]).recall[5] == pytest.approx(total / 40, abs=1e-15)


def test_chance_level_closed_form():
    split = planted_split()
    # 24 candidates, 4 relevant: each lands in the top 5 with probability 5/24
    assert chance_recall_at_k(split, 5) == pytest.approx(5 / 24, abs=1e-15)


def brute_cosine(a, b):
    na, nb = math.sqrt(sum(a)), math.sqrt(sum(b))
    if na == 0 or nb == 0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


TOY = [[0, 1, 2], [0, 1, 2], [3, 4], [0, 3]]


def test_knn_similarities_against_brute_force():
    split = as_split(TOY, 5)
    knn = UserKnnScorer(split, k_neighbors=2)
    dense = [[1.0 if i in t else 0.0 for i in range(5)] for t in TOY]
    for u in range(4):
        want = [brute_cosine(dense[u], dense[v]) for v in range(4)]
        np.testing.assert_allclose(knn.similarities(u), want, atol=1e-15)
    assert knn.similarities(0)[1] == pytest.approx(1.0)
    assert knn.similarities(0)[2] == 0.0


def test_knn_scores_against_brute_force():
    split = as_split(TOY, 5)
    dense = [[1.0 if i in t else 0.0 for i in range(5)] for t in TOY]
    for k in (1, 2, 3):
        knn = UserKnnScorer(split, k_neighbors=k)
        for u in range(4):
            sims = sorted(
                ((brute_cosine(dense[u], dense[v]), v) for v in range(4) if v != u),
                key=lambda sv: (-sv[0], sv[1]),
            )
            nbrs = [(s, v) for s, v in sims if s > 0][:k]
            want = [-sum(s * dense[v][i] for s, v in nbrs) for i in range(5)]
            np.testing.assert_allclose(knn.score_all(u), want, atol=1e-12)
        # orthogonal user 2 is never a neighbour of user 0
        assert 2 not in knn.neighbors(0)[0].tolist()


def test_knn_empty_user_falls_back_to_popularity():
    split = as_split([[0, 1], [1], []], 3)
    knn = UserKnnScorer(split)
    assert knn.score_all(2).tolist() == PopularityScorer(split).score_all(2).tolist()
    with pytest.raises(ValueError):
        UserKnnScorer(split, k_neighbors=0)


def test_similarity_symmetric_and_bounded(rng):
    train = [rng.choice(20, size=rng.integers(0, 10), replace=False).tolist() for _ in range(15)]
    knn = UserKnnScorer(as_split(train, 20))
    sims = np.array([knn.similarities(u) for u in range(15)])
    np.testing.assert_allclose(sims, sims.T, atol=1e-15)
    assert (sims >= 0).all() and (sims <= 1 + 1e-12).all()


def test_scorers_are_deterministic_and_evaluable(rng):
    train, test = random_split_lists(rng, 8, 12)
    split = as_split(train, 12, test)
    for make in (PopularityScorer, lambda s: UserKnnScorer(s, 3)):
        a = evaluate(make(split), split, [1, 5])
        b = evaluate(make(split), split, [1, 5])
        assert a.precision == b.precision and a.recall == b.recall
