import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from _oracles import random_model, shapley_oracle, toy_cohort, tree_walk_margin
from riskboost import gbdt
from riskboost.data import Cohort
from riskboost.errors import ExplanationError
from riskboost.explain import (
    brute_force_shapley, dependence_data, expected_margin, explain, global_importance, summary_data, tree_shap,
    tree_shap_matrix, waterfall,
)
from riskboost.gbdt import BoostedModel, TrainConfig, Tree


def _stump(thr=0.5, a=-1.0, b=2.0, c1=30.0, c2=10.0, n_features=2, feature=0):
    t = Tree(np.array([feature, -1, -1]), np.array([thr, 0.0, 0.0]), np.array([1, -1, -1]),
             np.array([2, -1, -1]), np.array([0.0, a, b]), np.array([c1 + c2, c1, c2]))
    names = [f"Feature{j + 1}" for j in range(n_features)]
    return BoostedModel((t,), TrainConfig(n_trees=1, max_depth=1), names, 0.5)


def test_matches_subset_oracle_on_random_models():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(60):
        m = random_model(rng, n_features=int(rng.integers(1, 7)), max_depth=int(rng.integers(1, 5)))
        X = rng.random((3, len(m.feature_names)))
        _, phi = tree_shap_matrix(m, X)
        for i in range(3):
            worst = max(worst, np.max(np.abs(phi[i] - shapley_oracle(m, X[i]))))
    assert worst <= 1e-9


def test_kernel_agrees_with_library_enumeration():
    rng = np.random.default_rng(8)
    for _ in range(40):
        m = random_model(rng)
        x = rng.random(len(m.feature_names))
        assert np.allclose(tree_shap(m, x)[1], brute_force_shapley(m, x), atol=1e-9, rtol=0)


@given(st.integers(0, 2**32 - 1))
def test_local_accuracy(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng)
    X = rng.random((5, len(m.feature_names)))
    base, phi = tree_shap_matrix(m, X)
    for i in range(5):
        assert abs(base + phi[i].sum() - tree_walk_margin(m, X[i])) <= 1e-9


def test_closed_form_stump():
    m = _stump()
    # base margin 0, so E[f] = 0.75*-1 + 0.25*2
    for x0, leaf in ((0.2, -1.0), (0.9, 2.0)):
        base, phi = tree_shap(m, np.array([x0, 0.7]))
        assert base == pytest.approx(-0.25, abs=1e-15)
        assert phi[0] == pytest.approx(leaf + 0.25, abs=1e-12)
        assert phi[1] == 0.0


def test_empty_ensemble():
    m = BoostedModel((), TrainConfig(n_trees=1), ["Feature1", "Feature2"], 0.2)
    base, phi = tree_shap_matrix(m, np.random.default_rng(0).random((4, 2)))
    assert base == pytest.approx(math.log(0.25), abs=1e-12)
    assert not phi.any()


def test_dummy_and_symmetric_features():
    # feature 1 never used; features 0 and 2 enter symmetrically via two stumps
    t0 = _stump(feature=0, n_features=3).trees[0]
    t2 = _stump(feature=2, n_features=3).trees[0]
    m = BoostedModel((t0, t2), TrainConfig(n_trees=2, max_depth=1), ["A", "B", "C"], 0.5)
    x = np.array([0.1, 0.9, 0.1])
    _, phi = tree_shap(m, x)
    assert phi[1] == 0.0
    assert phi[0] == pytest.approx(phi[2], abs=1e-15)


def test_additivity_over_trees():
    rng = np.random.default_rng(9)
    m = random_model(rng, n_features=5, n_trees=6)
    x = rng.random(5)
    parts = [tree_shap(BoostedModel((t,), m.config, m.feature_names, m.base_score), x)[1] for t in m.trees]
    assert np.allclose(tree_shap(m, x)[1], np.sum(parts, axis=0), atol=1e-12, rtol=0)


def test_zero_cover_and_input_errors():
    m = _stump(c2=0.0)
    with pytest.raises(ExplanationError, match="zero cover"):
        tree_shap(m, np.array([0.3, 0.3]))
    ok = _stump()
    with pytest.raises(ExplanationError):
        tree_shap(ok, np.array([0.3]))
    with pytest.raises(ExplanationError):
        tree_shap(ok, np.array([np.nan, 0.3]))


def test_enumeration_cap():
    rng = np.random.default_rng(3)
    trees = [_stump(feature=j, n_features=22).trees[0] for j in range(21)]
    m = BoostedModel(tuple(trees), TrainConfig(n_trees=21, max_depth=1), [f"F{j}" for j in range(22)], 0.5)
    with pytest.raises(ExplanationError, match="capped"):
        brute_force_shapley(m, rng.random(22))


@pytest.fixture(scope="module")
def fitted():
    c = toy_cohort(n=300, d=5, prevalence=0.2, seed=11, signal=(0, 1))
    m = gbdt.fit(c, None, TrainConfig(n_trees=20, max_depth=3, learning_rate=0.3))
    return c, m, explain(m, c)


def test_explain_cohort(fitted):
    c, m, attr = fitted
    assert attr.phi.shape == (300, 5)
    assert attr.base_value == expected_margin(m)
    assert np.max(np.abs(attr.base_value + attr.phi.sum(axis=1) - attr.margins)) <= 1e-9
    assert explain(m, c, workers=3, chunk=37).phi.tobytes() == attr.phi.tobytes()


def test_global_importance(fitted):
    _, _, attr = fitted
    imp = global_importance(attr)
    vals = [v for _, v in imp.entries]
    assert vals == sorted(vals, reverse=True)
    assert set(imp.indices[:2]) == {0, 1}
    assert vals[0] == pytest.approx(float(np.abs(attr.phi[:, imp.indices[0]]).mean()), abs=1e-12)
    empty = type(attr)(0.0, np.zeros((0, 5)), (), attr.feature_names)
    with pytest.raises(ExplanationError):
        global_importance(empty)


def test_summary_and_dependence(fitted):
    c, _, attr = fitted
    recs = summary_data(attr, c, top_k=3)
    assert len(recs) == 300 * 3
    assert all(0.0 <= r["normalized_value"] <= 1.0 for r in recs)
    dep = dependence_data(attr, c, "Feature1")
    assert len(dep) == 300
    assert dep[5] == (float(c.features[5, 0]), float(attr.phi[5, 0]))


def test_summary_constant_feature_normalizes_to_half():
    X = np.column_stack([np.full(50, 0.4), np.linspace(0, 1, 50)])
    y = (np.arange(50) % 5 == 0).astype(int)
    c = Cohort.from_arrays(X, y)
    m = gbdt.fit(c, None, TrainConfig(n_trees=3, max_depth=2))
    recs = summary_data(explain(m, c), c, top_k=2)
    assert {r["normalized_value"] for r in recs if r["feature"] == "Feature1"} == {0.5}


def test_waterfall(fitted):
    c, _, attr = fitted
    sid = c.subject_ids[17]
    margin = attr.margins[17]
    full = waterfall(attr, sid, top_k=10)
    assert not any(s["index"] is None for s in full.steps)
    assert full.final_margin == pytest.approx(margin, abs=1e-9)
    contrib = [abs(s["contribution"]) for s in full.steps]
    assert contrib == sorted(contrib, reverse=True)
    only_other = waterfall(attr, sid, top_k=0)
    assert len(only_other.steps) == 1 and only_other.steps[0]["feature"].startswith("other")
    assert only_other.final_margin == pytest.approx(margin, abs=1e-9)
    two = waterfall(attr, sid, top_k=2)
    assert len(two.steps) == 3 and two.to_dict()["scale"].startswith("margin")
    with pytest.raises(ExplanationError):
        waterfall(attr, "nobody")
