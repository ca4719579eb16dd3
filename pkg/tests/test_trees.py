import numpy as np
import pytest

from driftbench._kernels import best_gini_split
from driftbench.core import LabeledBatch
from driftbench.evaluation import macro_f1
from driftbench.trees import (LEAF, BoostedEnsemble, DecisionTree, RandomForest,
                              boosted_fit_stages, boosted_objective, fit_decision_tree,
                              fit_gradient_tree, fit_random_forest, predict_with_confidence)
from helpers import blobs

THREE = [[0, 0], [6, 0], [0, 6]]


def _leaf(n_classes, cls):
    value = np.zeros((1, n_classes))
    value[0, cls] = 1.0
    return DecisionTree(np.array([LEAF]), np.zeros(1), np.array([LEAF]), np.array([LEAF]),
                        value, 0)


def _stump_forest(classes, n_classes=2):
    trees = tuple(_leaf(n_classes, c) for c in classes)
    return RandomForest(trees, len(trees), 1, None, 0, n_classes, 1)


# gini split search against brute force

def _gini_impurity(y, class_count):
    if len(y) == 0:
        return 0.0
    p = np.bincount(y, minlength=class_count) / len(y)
    return len(y) * (1.0 - np.sum(p ** 2))


def _brute_gini(X, y, class_count):
    best = np.inf
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            left = X[:, f] <= thr
            imp = _gini_impurity(y[left], class_count) + _gini_impurity(y[~left], class_count)
            best = min(best, imp)
    return best


@pytest.mark.parametrize("seed", range(10))
def test_gini_split_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(40, 3)), 1)  # rounding creates ties
    y = rng.integers(0, 3, size=40)
    f, thr = best_gini_split(X, np.arange(40), y, np.arange(3), 3)
    left = X[:, f] <= thr
    got = _gini_impurity(y[left], 3) + _gini_impurity(y[~left], 3)
    assert got == pytest.approx(_brute_gini(X, y, 3), abs=1e-9)
    assert 0 < left.sum() < 40


def test_gini_split_none_on_constant_feature():
    X = np.ones((6, 1))
    f, _ = best_gini_split(X, np.arange(6), np.array([0, 1, 0, 1, 0, 1]), np.arange(1), 2)
    assert f == -1


# random forest

def test_forest_separable_blobs_perfect():
    d = blobs([[0, 0], [8, 8]], n_per_class=50, seed=1)
    rf = fit_random_forest(d, tree_count=20, rng_seed=0)
    pred, _ = predict_with_confidence(rf, d)
    assert macro_f1(d.labels, pred) == 1.0


def test_forest_single_class():
    d = LabeledBatch(np.random.default_rng(0).normal(size=(20, 3)), np.zeros(20, dtype=int))
    pred, conf = predict_with_confidence(fit_random_forest(d, tree_count=10), d)
    assert np.all(pred == 0) and np.all(conf == 1.0)


def test_forest_deterministic():
    d = blobs(THREE, seed=2, scale=2.0)
    a = fit_random_forest(d, tree_count=10, rng_seed=4)
    b = fit_random_forest(d, tree_count=10, rng_seed=4)
    c = fit_random_forest(d, tree_count=10, rng_seed=5)
    assert a.equals(b) and not a.equals(c)


def test_forest_empty_and_mismatch_errors():
    with pytest.raises(ValueError, match="empty training set"):
        fit_random_forest(LabeledBatch(np.zeros((0, 2)), np.zeros(0, dtype=int)))
    rf = fit_random_forest(blobs(THREE), tree_count=3)
    with pytest.raises(ValueError):
        predict_with_confidence(rf, LabeledBatch(np.zeros((2, 5))))


def test_forest_beats_majority_baseline():
    d = blobs(THREE, seed=3, scale=3.0)
    pred, _ = predict_with_confidence(fit_random_forest(d, tree_count=10, max_depth=2), d)
    assert np.mean(pred == d.labels) >= np.max(np.bincount(d.labels)) / d.n_rows


def test_unanimous_confidence():
    pred, conf = predict_with_confidence(_stump_forest([1] * 7), LabeledBatch(np.zeros((3, 1))))
    assert pred.tolist() == [1, 1, 1] and np.all(conf == 1.0)


def test_vote_fraction_confidence():
    pred, conf = predict_with_confidence(_stump_forest([0] * 60 + [1] * 40),
                                         LabeledBatch(np.zeros((2, 1))))
    assert pred.tolist() == [0, 0] and conf.tolist() == [0.6, 0.6]


def test_vote_tie_goes_to_lowest_class():
    pred, conf = predict_with_confidence(_stump_forest([2, 1, 2, 1], 3), LabeledBatch(np.zeros((1, 1))))
    assert pred[0] == 1 and conf[0] == 0.5


def test_confidence_higher_in_distribution():
    wins = 0
    for seed in range(8):
        d = blobs(THREE, seed=seed, scale=1.5)
        rf = fit_random_forest(d, tree_count=30, rng_seed=seed)
        _, c_in = predict_with_confidence(rf, blobs(THREE, seed=100 + seed, scale=1.5))
        shifted = blobs(np.array(THREE) + [3, 3], seed=200 + seed, scale=1.5)
        _, c_out = predict_with_confidence(rf, shifted)
        wins += c_in.mean() > c_out.mean()
    assert wins == 8


def test_single_tree_forest_equals_decision_tree():
    d = blobs(THREE, seed=5, scale=2.0)
    rf = fit_random_forest(d, tree_count=1, features_per_split=2, bootstrap=False)
    tree = fit_decision_tree(d.features, d.labels, 3)
    assert rf.trees[0].equals(tree)


def test_tree_children_exist_and_leaf_width():
    d = blobs(THREE, seed=6, scale=2.0)
    t = fit_decision_tree(d.features, d.labels, 3)
    internal = t.feature != LEAF
    assert np.all(t.left[internal] >= 0) and np.all(t.right[internal] >= 0)
    assert np.all(t.left[internal] < t.n_nodes) and np.all(t.right[internal] < t.n_nodes)
    assert t.value.shape == (t.n_nodes, 3)
    assert np.all(np.isin(t.apply(d.features), np.nonzero(~internal)[0]))
    assert t.dump().count("\n") == t.n_nodes - 1


# gradient trees

def test_leaf_values_closed_form_single_split():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    grad = np.array([-1.0, -0.5, 0.75, 1.25])
    hess = np.array([0.25, 0.5, 0.125, 0.375])
    lam = 1.0
    t = fit_gradient_tree(X, grad, hess, max_depth=1, reg_lambda=lam, min_child_weight=0.0)
    assert t.n_nodes == 3 and t.feature[0] == 0 and t.threshold[0] == 1.5
    left, right = t.left[0], t.right[0]
    assert abs(t.value[left, 0] - 1.5 / (0.75 + lam)) <= 1e-12
    assert abs(t.value[right, 0] - (-2.0 / (0.5 + lam))) <= 1e-12


def _brute_gradient_gain(X, g, h, lam):
    G, H = g.sum(), h.sum()
    best = 0.0
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            left = X[:, f] <= 0.5 * (a + b)
            gl, hl = g[left].sum(), h[left].sum()
            gain = 0.5 * (gl ** 2 / (hl + lam) + (G - gl) ** 2 / (H - hl + lam) - G ** 2 / (H + lam))
            best = max(best, gain)
    return best


@pytest.mark.parametrize("seed", range(8))
def test_gradient_split_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(30, 3)), 1)
    g = rng.normal(size=30)
    h = rng.uniform(0.1, 1.0, size=30)
    t = fit_gradient_tree(X, g, h, max_depth=1, reg_lambda=1.0, min_child_weight=0.0)
    best = _brute_gradient_gain(X, g, h, 1.0)
    assert t.feature[0] != LEAF
    left = X[:, t.feature[0]] <= t.threshold[0]
    gl, hl = g[left].sum(), h[left].sum()
    G, H = g.sum(), h.sum()
    got = 0.5 * (gl ** 2 / (hl + 1) + (G - gl) ** 2 / (H - hl + 1) - G ** 2 / (H + 1))
    assert got == pytest.approx(best, rel=1e-9)


def test_gamma_blocks_weak_splits():
    X = np.array([[0.0], [1.0]])
    t = fit_gradient_tree(X, np.array([-0.1, 0.1]), np.ones(2), max_depth=3, reg_gamma=10.0,
                          min_child_weight=0.0)
    assert t.n_nodes == 1 and t.value[0, 0] == 0.0


# boosting

def test_boosting_separable_trace():
    for seed in range(4):
        d = blobs(THREE, n_per_class=40, seed=seed)
        _, trace = boosted_fit_stages(None, d, 5)
        assert len(trace) == 5
        assert all(b >= a for a, b in zip(trace, trace[1:]))
        assert trace[-1] >= 0.95


def test_boosting_rounds_and_unseen_class():
    d = blobs(THREE)
    with pytest.raises(ValueError):
        boosted_fit_stages(None, d, 0)
    ens, _ = boosted_fit_stages(None, d.take(np.nonzero(d.labels < 2)[0]), 1)
    with pytest.raises(ValueError, match="unseen class id"):
        boosted_fit_stages(ens, d, 1)


def test_boosting_proba_sums_to_one():
    d = blobs(THREE, scale=2.0)
    ens, _ = boosted_fit_stages(None, d, 3)
    p = ens.predict_proba(d.features)
    assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-9)


def test_warm_start_appends_only():
    d0 = blobs(THREE, seed=1, scale=1.5)
    d1 = blobs(THREE, seed=2, scale=1.5)
    ens, trace0 = boosted_fit_stages(None, d0, 5)
    before = [t.dump() for stage in ens.stages for t in stage]
    more, trace1 = boosted_fit_stages(ens, d1, 5)
    assert len(more.stages) == 10 and len(ens.stages) == 5
    assert [t.dump() for stage in more.stages[:5] for t in stage] == before
    assert all(abs(v - trace0[-1]) <= 0.1 for v in trace1)


def test_boosted_objective_non_increasing():
    for seed in range(6):
        d = blobs(THREE, n_per_class=40, seed=seed, scale=2.5)
        ens = BoostedEnsemble(3)
        objective = [boosted_objective(ens, d)]
        for _ in range(6):
            ens, _ = boosted_fit_stages(ens, d, 1)
            objective.append(boosted_objective(ens, d))
        assert all(b <= a + 1e-9 for a, b in zip(objective, objective[1:]))
