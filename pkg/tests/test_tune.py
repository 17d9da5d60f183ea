from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from _oracles import toy_cohort
from riskboost import gbdt, tune
from riskboost.errors import TuningError
from riskboost.gbdt import TrainConfig
from riskboost.tune import Grid, average_precision, grid_search, stratified_kfold


def _labels(n_pos, n_neg):
    return np.r_[np.ones(n_pos, int), np.zeros(n_neg, int)]


def test_exact_divisibility():
    folds = stratified_kfold(_labels(10, 90), 5, seed=1)
    y = _labels(10, 90)
    for tr, va in folds:
        assert (y[va].sum(), (1 - y[va]).sum()) == (2, 18)
        assert np.intersect1d(tr, va).size == 0


def test_remainder_spreading():
    y = _labels(7, 30)
    sizes = sorted(int(y[va].sum()) for _, va in stratified_kfold(y, 5, seed=3))
    assert sizes == [1, 1, 1, 2, 2]


@given(st.integers(5, 40), st.integers(5, 200), st.integers(2, 5), st.integers(0, 2**32))
def test_partition_and_balance(n_pos, n_neg, k, seed):
    y = _labels(n_pos, n_neg)
    folds = stratified_kfold(y, k, seed)
    val = np.concatenate([va for _, va in folds])
    assert sorted(val.tolist()) == list(range(y.size))
    for tr, va in folds:
        assert sorted(np.r_[tr, va].tolist()) == list(range(y.size))
        for cls, count in ((1, n_pos), (0, n_neg)):
            assert abs(int(np.sum(y[va] == cls)) - count / k) < 1
    assert [v.tolist() for _, v in stratified_kfold(y, k, seed)] == [v.tolist() for _, v in folds]


def test_fold_counts_invariant_to_row_order():
    rng = np.random.default_rng(0)
    y = _labels(13, 77)
    perm = rng.permutation(y.size)
    count = lambda labels: Counter((int(labels[va].sum()), va.size) for _, va in stratified_kfold(labels, 5, 9))
    assert count(y) == count(y[perm])


def test_too_few_members():
    with pytest.raises(TuningError):
        stratified_kfold(_labels(3, 50), 5)
    with pytest.raises(TuningError):
        stratified_kfold(_labels(3, 50), 1)


def test_average_precision_contract():
    assert average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    with pytest.raises(TuningError):
        average_precision([0.2, 0.3], [0, 0])


@given(st.lists(st.tuples(st.integers(0, 64), st.integers(0, 1)), min_size=1, max_size=30))
def test_average_precision_monotone_invariance(pairs):
    s = np.array([p[0] for p in pairs]) / 64
    y = np.array([p[1] for p in pairs])
    if y.sum() == 0:
        return
    ap = average_precision(s, y)
    assert 0 < ap <= 1
    assert average_precision(np.exp(4 * s) + s ** 3, y) == ap


def test_grid_validation_and_configs():
    g = Grid()
    assert g.size == 54
    cfgs = g.configs(_labels(10, 90))
    assert len(cfgs) == 54
    assert {c.scale_pos_weight for c in cfgs} == {1.0, 9.0}
    assert Grid.from_dict(g.to_dict()) == g
    with pytest.raises(TuningError):
        Grid(n_trees=())
    with pytest.raises(TuningError):
        Grid(learning_rate=(2.0,))
    with pytest.raises(TuningError):
        Grid(scale_pos_weight=(0,))
    with pytest.raises(TuningError):
        Grid.from_dict({"depth": [1]})


def test_singleton_grid():
    c = toy_cohort(n=150, seed=1)
    g = Grid(n_trees=(5,), max_depth=(2,), learning_rate=(0.3,), scale_pos_weight=(1.0,))
    r = grid_search(c, None, g, k=3, seed=2)
    assert r.best_config == TrainConfig(n_trees=5, max_depth=2, learning_rate=0.3, seed=2)
    assert len(r.scores) == 1 and len(r.scores[0].fold_scores) == 3


@pytest.fixture(scope="module")
def search():
    c = toy_cohort(n=240, d=6, prevalence=0.15, seed=5, signal=(0, 1))
    g = Grid(n_trees=(5, 15), max_depth=(1, 3), learning_rate=(0.1, 0.3), scale_pos_weight=(1.0, "balanced"))
    return c, g, grid_search(c, [0, 1, 2, 3], g, k=3, seed=4)


def test_grid_search_bookkeeping(search):
    c, g, r = search
    assert len(r.scores) == g.size
    assert sum(len(s.fold_scores) for s in r.scores) == g.size * 3
    best = r.best
    assert best.mean == float(np.mean(best.fold_scores))
    assert all(best.mean >= s.mean for s in r.scores)
    d = r.to_dict()
    assert d["best_mean_score"] == best.mean and len(d["results"]) == g.size


def test_fold_scores_reproducible_by_independent_refit(search):
    c, g, r = search
    folds = stratified_kfold(c.labels, 3, 4)
    for s in r.scores[::5]:
        for f, (tr, va) in enumerate(folds):
            m = gbdt.fit_arrays(c.features[tr], c.labels[tr], [0, 1, 2, 3], s.config, c.feature_names)
            assert average_precision(gbdt.predict_proba(m, c.features[va]), c.labels[va]) == s.fold_scores[f]


def test_worker_count_invariance(search):
    c, g, r = search
    r4 = grid_search(c, [0, 1, 2, 3], g, k=3, seed=4, workers=4)
    assert r4.to_dict() == r.to_dict()


def test_truncation_equals_shorter_fit():
    c = toy_cohort(n=200, seed=3)
    long = gbdt.fit(c, None, TrainConfig(n_trees=12))
    short = gbdt.fit(c, None, TrainConfig(n_trees=5))
    assert gbdt.model_to_dict(tune.truncate(long, 5)) == gbdt.model_to_dict(short)


def test_tie_breaking():
    mk = lambda nt, md, lr: tune.ConfigScore(TrainConfig(n_trees=nt, max_depth=md, learning_rate=lr), [0.5])
    scores = [mk(200, 3, 0.1), mk(100, 4, 0.1), mk(100, 3, 0.03), mk(100, 3, 0.3)]
    assert tune.pick_best(scores) == TrainConfig(n_trees=100, max_depth=3, learning_rate=0.3)
    scores.append(tune.ConfigScore(TrainConfig(n_trees=400, max_depth=6), [0.6]))
    assert tune.pick_best(scores).n_trees == 400


def test_cv_csv(search, tmp_path):
    _, g, r = search
    r.write_csv(tmp_path / "cv.csv")
    rows = (tmp_path / "cv.csv").read_text().splitlines()
    assert len(rows) == 1 + g.size * 3


def test_map_ordered_preserves_order():
    assert tune.map_ordered(lambda x: x * x, list(range(20)), workers=4) == [x * x for x in range(20)]
