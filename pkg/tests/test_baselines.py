import numpy as np
import pytest
from hypothesis import given, strategies as st

from _oracles import toy_cohort
from riskboost.baselines import KnnConfig, knn_evaluate, knn_grid_search, knn_score, knn_scores, nearest_neighbors
from riskboost.data import Cohort
from riskboost.errors import ContractError


def test_self_match_and_full_neighbourhood():
    rng = np.random.default_rng(0)
    X = rng.random((40, 3))
    y = (rng.random(40) < 0.3).astype(int)
    y[:2] = 1
    assert np.all(knn_scores(X, y, X, KnnConfig(k=1)) == y)
    assert np.allclose(knn_scores(X, y, X[:5], KnnConfig(k=40)), y.mean(), atol=1e-15)


def _oracle_neighbours(train, x, k, metric):
    d = [(float(np.sum(np.abs(t - x))) if metric == "manhattan" else float(np.sqrt(np.sum((t - x) ** 2))), i)
         for i, t in enumerate(train)]
    return [i for _, i in sorted(d)[:k]]


@pytest.mark.parametrize("metric", ["euclidean", "manhattan"])
def test_neighbours_match_full_sort(metric):
    rng = np.random.default_rng(1)
    train = np.round(rng.random((80, 4)), 1)  # coarse grid forces distance ties
    X = np.round(rng.random((30, 4)), 1)
    nn, _ = nearest_neighbors(train, X, 7, metric, chunk=11)
    for i in range(30):
        assert nn[i].tolist() == _oracle_neighbours(train, X[i], 7, metric)


@given(st.integers(1, 15), st.integers(0, 2**32 - 1))
def test_uniform_scores_are_neighbour_fractions(k, seed):
    rng = np.random.default_rng(seed)
    X = rng.random((30, 2))
    y = (rng.random(30) < 0.4).astype(int)
    s = knn_scores(X, y, rng.random((10, 2)), KnnConfig(k=k))
    assert np.allclose(s * k, np.round(s * k), atol=1e-12)
    assert np.all((0 <= s) & (s <= 1))


def test_training_row_permutation_invariance():
    rng = np.random.default_rng(2)
    X = rng.random((50, 3))
    y = (rng.random(50) < 0.3).astype(int)
    Q = rng.random((20, 3))
    perm = rng.permutation(50)
    cfg = KnnConfig(k=5)
    assert np.array_equal(knn_scores(X, y, Q, cfg), knn_scores(X[perm], y[perm], Q, cfg))


def test_inverse_distance_weighting():
    train = np.array([[0.0], [1.0], [3.0]])
    y = np.array([1, 0, 0])
    cfg = KnnConfig(k=2, weighting="inverse-distance")
    # neighbours of 0.5: rows 0 and 1, both at 0.5 -> equal weights
    assert knn_scores(train, y, [[0.5]], cfg)[0] == 0.5
    # 0.25: weights 4 and 4/3
    assert knn_scores(train, y, [[0.25]], cfg)[0] == pytest.approx(4 / (4 + 4 / 3), abs=1e-15)
    # an exact match takes all the weight
    assert knn_scores(train, y, [[0.0]], cfg)[0] == 1.0


def test_separated_clusters():
    rng = np.random.default_rng(3)
    pos = rng.normal(0.8, 0.03, (60, 3))
    neg = rng.normal(0.2, 0.03, (140, 3))
    c = Cohort.from_arrays(np.clip(np.r_[pos, neg], 0, 1), np.r_[np.ones(60, int), np.zeros(140, int)])
    rep = knn_evaluate(c, c, KnnConfig(k=5))
    assert rep.auc_roc >= 0.99


def test_contract_errors():
    X = np.zeros((5, 2))
    with pytest.raises(ContractError):
        knn_scores(X, np.zeros(5), np.zeros((1, 3)), KnnConfig())
    with pytest.raises(ContractError):
        knn_scores(X, np.zeros(5), np.zeros((1, 2)), KnnConfig(k=6))
    with pytest.raises(ContractError):
        KnnConfig(k=0)
    with pytest.raises(ContractError):
        KnnConfig(metric="cosine")


def test_grid_search_is_worker_invariant_and_prefers_small_k():
    c = toy_cohort(n=200, d=4, prevalence=0.2, seed=4, signal=(0,))
    best, res = knn_grid_search(c, [0, 1], ks=(3, 5, 9), k_folds=4, seed=1)
    best4, res4 = knn_grid_search(c, [0, 1], ks=(3, 5, 9), k_folds=4, seed=1, workers=4)
    assert (best, res) == (best4, res4)
    means = {cfg.k: np.mean(s) for cfg, s in res}
    assert means[best.k] == max(means.values())
    assert best.k == min(k for k, v in means.items() if v == means[best.k])
    assert knn_score(c, best, c.features[0]) == knn_scores(c.features, c.labels, c.features[:1], best)[0]
