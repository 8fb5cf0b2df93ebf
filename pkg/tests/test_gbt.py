import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retboost.gbt import (
    GbtModel, GbtParams, best_split, fit_gbt, gain_importance, leaf_weight, predict_gbt, split_gain,
    train_mse_path, tree_depth,
)

from oracles import brute_force_boost, compare_trees, package_tree_as_dict, random_gbt_case


def params(**kw):
    return GbtParams(**{"n_estimators": 10, "max_depth": 3, **kw})


# ---------------------------------------------------------------- closed forms


def test_leaf_weight_hand_values():
    assert leaf_weight(0.0, 3.0) == 0.0
    assert leaf_weight(-4.0, 2.0, reg_alpha=0.0, reg_lambda=0.0) == 2.0
    assert leaf_weight(-4.0, 2.0, reg_alpha=1.0, reg_lambda=2.0) == 0.75
    assert leaf_weight(0.5, 2.0, reg_alpha=1.0) == 0.0
    with pytest.raises(ValueError):
        leaf_weight(1.0, 0.0)


def test_split_gain_hand_value():
    assert split_gain(-2.0, 1.0, 2.0, 1.0, reg_lambda=0.0, gamma=0.0) == 4.0
    assert split_gain(-2.0, 1.0, 2.0, 1.0, reg_lambda=0.0, gamma=1.5) == 2.5


def test_homogeneous_gradients_never_split():
    X = np.arange(10.0)[:, None]
    assert best_split(X, np.full(10, 0.3), reg_lambda=1.0) is None


def test_gamma_prunes_small_gains():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    g = np.array([-1.0, -1.0, 1.0, 1.0])
    f, thr, gain = best_split(X, g, reg_lambda=0.0)
    assert (f, thr, gain) == (0, 1.5, 2.0)
    assert best_split(X, g, reg_lambda=0.0, gamma=5.0) is None
    assert best_split(X, g, reg_lambda=0.0, gamma=1.9)[2] == pytest.approx(0.1)


def test_min_child_weight_blocks_small_children():
    X = np.arange(4.0)[:, None]
    g = np.array([-5.0, 1.0, 1.0, 1.0])
    assert best_split(X, g, min_child_weight=1.0)[1] == 0.5
    f, thr, _ = best_split(X, g, min_child_weight=2.0)
    assert thr == 1.5


def test_ties_prefer_lowest_feature_then_threshold():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    g = np.array([-1.0, 1.0, -1.0, 1.0])
    f, thr, _ = best_split(X, g, reg_lambda=0.0)
    # splits at 0.5 and 2.5 score the same; feature 1 duplicates feature 0
    assert (f, thr) == (0, 0.5)


def test_four_row_exhaustive_example():
    X = np.array([[1.0], [2.0], [4.0], [8.0]])
    y = np.array([0.1, 0.4, -0.2, 0.9])
    m = fit_gbt(X, y, GbtParams(n_estimators=1, max_depth=1, learning_rate=1.0, reg_lambda=1.0,
                                split_mode="exact"))
    base, trees = brute_force_boost(X, y, rounds=1, depth=1, lr=1.0, lam=1.0)
    assert compare_trees(package_tree_as_dict(m.trees[0]), trees[0]) is None
    assert abs(m.base_score - base) <= 1e-12


@pytest.mark.parametrize("seed", range(40))
def test_matches_brute_force_enumerator(seed):
    X, y, s = random_gbt_case(1000 + seed)
    for mode in ("exact", "histogram"):
        m = fit_gbt(X, y, GbtParams(n_estimators=s["rounds"], max_depth=s["depth"], learning_rate=s["lr"],
                                    reg_lambda=s["lam"], gamma=s["gamma"], min_child_weight=s["mcw"],
                                    reg_alpha=s["alpha"], split_mode=mode))
        base, trees = brute_force_boost(X, y, **s)
        assert abs(m.base_score - base) <= 1e-12
        for t, o in zip(m.trees, trees):
            assert compare_trees(package_tree_as_dict(t), o) is None


# ------------------------------------------------------------------- fitting


def test_constant_target_is_exact():
    X = np.random.default_rng(0).normal(size=(50, 3))
    y = np.full(50, 0.0123)
    m = fit_gbt(X, y, params(subsample=0.7, colsample_bytree=0.7))
    assert np.all(predict_gbt(m, X) == 0.0123)
    assert np.all(predict_gbt(m, X + 5) == 0.0123)


def test_zero_trees_predict_base_score():
    X = np.random.default_rng(1).normal(size=(20, 2))
    y = np.arange(20.0)
    m = fit_gbt(X, y, params(n_estimators=0))
    assert np.all(predict_gbt(m, X) == m.base_score)
    assert m.base_score == pytest.approx(9.5)


def test_hand_built_stump_prediction():
    from retboost.gbt import Tree
    tree = Tree(feature=np.array([1, -1, -1]), threshold=np.array([0.5, 0.0, 0.0]),
                left=np.array([1, -1, -1]), right=np.array([2, -1, -1]),
                gain=np.array([1.0, 0.0, 0.0]), value=np.array([0.0, -2.0, 3.0]))
    m = GbtModel(base_score=1.0, trees=[tree], learning_rate=0.5, n_features=2,
                 feature_names=["a", "b"], feature_gain_totals=np.array([0.0, 1.0]))
    X = np.array([[9.0, 0.5], [9.0, 0.6], [-9.0, -3.0]])
    assert predict_gbt(m, X).tolist() == [0.0, 2.5, 0.0]


def test_train_predictions_match_predict_bitwise():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 5))
    y = np.sin(X[:, 0]) + 0.1 * rng.normal(size=300)
    m = fit_gbt(X, y, params(n_estimators=30, subsample=0.8, colsample_bytree=0.6))
    assert predict_gbt(m, X).tobytes() == m._train_pred.tobytes()


def test_seeded_determinism_and_seed_sensitivity():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 4))
    y = X[:, 0] * X[:, 1] + rng.normal(size=200)
    p = params(subsample=0.7, colsample_bytree=0.5)
    a, b = fit_gbt(X, y, p), fit_gbt(X, y, p)
    assert a.to_json() == b.to_json()
    c = fit_gbt(X, y, GbtParams(**{**p.__dict__, "seed": 7}))
    assert c.to_json() != a.to_json()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 1.0), st.integers(1, 5))
def test_training_loss_is_monotone(seed, lr, depth):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(80, 3))
    y = X[:, 0] ** 2 + rng.normal(size=80)
    m = fit_gbt(X, y, GbtParams(n_estimators=15, max_depth=depth, learning_rate=lr))
    path = train_mse_path(m, X, y)
    assert np.all(np.diff(path) <= 1e-12)


def test_depth_limit_and_positive_gains():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(500, 4))
    y = rng.normal(size=500)
    m = fit_gbt(X, y, params(max_depth=4, n_estimators=5, gamma=0.1))
    for t in m.trees:
        assert tree_depth(t) <= 4
        assert np.all(t.gain[t.feature >= 0] > 0)


def test_histogram_equals_exact_when_few_distinct_values():
    rng = np.random.default_rng(5)
    X = rng.integers(0, 40, size=(400, 3)).astype(float)
    y = X[:, 0] % 7 + rng.normal(size=400)
    a = fit_gbt(X, y, params(split_mode="exact"))
    b = fit_gbt(X, y, params(split_mode="histogram", max_bins=64))
    assert predict_gbt(a, X).tobytes() == predict_gbt(b, X).tobytes()
    assert [t.to_dict() for t in a.trees] == [t.to_dict() for t in b.trees]


def test_histogram_bins_respect_max_bins():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(2000, 1))
    y = X[:, 0] + rng.normal(size=2000)
    m = fit_gbt(X, y, params(max_bins=8, max_depth=6, n_estimators=1))
    thresholds = {float(t) for t in m.trees[0].threshold[m.trees[0].feature >= 0]}
    assert len(thresholds) <= 7


def test_importance_recovers_planted_signal():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(600, 2))
    y = np.where(X[:, 0] > 0, 1.0, -1.0) + 0.1 * rng.normal(size=600)
    m = fit_gbt(X, y, params(n_estimators=20), feature_names=["signal", "noise"])
    ranked = gain_importance(m)
    assert ranked[0][0] == "signal"
    assert ranked[0][1] > 50 * ranked[1][1]
    single = fit_gbt(X[:, :1], y, params())
    assert gain_importance(single)[0][1] == pytest.approx(single.feature_gain_totals.sum())


def test_importance_ties_keep_column_order():
    m = GbtModel(base_score=0.0, trees=[], learning_rate=0.1, n_features=3, feature_names=["a", "b", "c"],
                 feature_gain_totals=np.array([1.0, 2.0, 1.0]))
    assert [f for f, _ in gain_importance(m)] == ["b", "a", "c"]


def test_json_round_trip():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(100, 3))
    y = X[:, 0] + rng.normal(size=100)
    m = fit_gbt(X, y, params(), feature_names=["x", "y", "z"])
    text = m.to_json()
    doc = json.loads(text)
    assert doc["format"] == "retboost-gbt/1" and len(doc["trees"]) == 10
    back = GbtModel.from_json(text)
    assert predict_gbt(back, X).tobytes() == predict_gbt(m, X).tobytes()
    assert back.to_json() == text


@pytest.mark.parametrize("bad", [
    dict(learning_rate=0.0), dict(subsample=0.0), dict(colsample_bytree=1.5), dict(gamma=-1.0),
    dict(split_mode="approx"), dict(max_bins=1), dict(n_estimators=-1),
])
def test_param_validation(bad):
    with pytest.raises(ValueError):
        GbtParams(**bad)


def test_input_validation():
    with pytest.raises(ValueError):
        fit_gbt(np.zeros((1, 2)), np.zeros(1))
    with pytest.raises(ValueError):
        fit_gbt(np.array([[np.nan], [1.0]]), np.zeros(2))
    m = fit_gbt(np.arange(6.0).reshape(3, 2), np.arange(3.0), params(n_estimators=1))
    with pytest.raises(ValueError, match="features"):
        predict_gbt(m, np.zeros((2, 3)))
