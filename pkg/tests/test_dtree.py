import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_root_splits
from probattr.dtree import DecisionTree, fit, predict, predict_dist, render, truncate, tune_max_depth


def stump_data():
    x = np.array([0.1, 0.2, 0.4, 0.45, 0.6, 0.7, 0.9])
    return x[:, None], (x > 0.5).astype(int)


@pytest.mark.parametrize("depth", [1, 2, 5, None])
def test_separable_stump(depth):
    X, y = stump_data()
    tree = fit(X, y, depth)
    assert tree.n_nodes == 3
    assert 0.45 < tree.threshold[0] < 0.6
    assert np.mean(predict(tree, X) == y) == 1.0
    assert predict(tree, np.array([0.9])) == 1


def test_pure_data_gives_single_leaf():
    tree = fit(np.random.default_rng(0).normal(size=(10, 3)), ["a"] * 10, 5)
    assert tree.n_nodes == 1 and tree.is_leaf(0)
    assert predict(tree, np.zeros(3)) == "a"


def test_predict_dist_is_distribution(rng):
    X = rng.normal(size=(50, 4))
    y = rng.integers(0, 3, 50)
    tree = fit(X, y, 3)
    d = predict_dist(tree, rng.normal(size=(20, 4)))
    np.testing.assert_allclose(d.sum(axis=1), 1.0)


def test_hand_traced_three_node_tree():
    # if x1 <= 0.5 -> left leaf (A:3, B:1) else right leaf (A:0, B:2)
    tree = DecisionTree(np.array([1, -1, -1]), np.array([0.5, 0.0, 0.0]), np.array([1, -1, -1]),
                        np.array([2, -1, -1]), np.array([[3, 3], [3, 1], [0, 2]]), 2, ["A", "B"])
    assert render(tree, ["f0", "f1"]).splitlines()[0] == "if f1 <= 0.5:"
    cases = [([9.0, 0.5], "A"), ([9.0, 0.51], "B"), ([-1.0, -3.0], "A")]
    for x, label in cases:
        assert predict(tree, np.array(x)) == label
    np.testing.assert_allclose(predict_dist(tree, np.array([0.0, 0.0])), [0.75, 0.25])


def test_prediction_tie_goes_to_lowest_class():
    tree = DecisionTree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                        np.array([[2, 2]]), 1, ["x", "y"])
    assert predict(tree, np.array([0.0])) == "x"


def test_root_split_matches_exhaustive_search():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n, d = int(rng.integers(2, 65)), int(rng.integers(1, 7))
        X = rng.normal(size=(n, d))
        if rng.random() < 0.5:
            X = np.round(X, 1)
        y = rng.integers(0, int(rng.integers(2, 4)), n)
        tree = fit(X, y, 1, seed=int(rng.integers(1000)))
        best, gain = brute_root_splits(X, y)
        if tree.is_leaf(0):
            assert not best or len(set(y)) == 1
            continue
        assert (int(tree.feature[0]), float(tree.threshold[0])) in best
        left = tree.counts[tree.left[0]]
        right = tree.counts[tree.right[0]]
        n_l, n_r = left.sum(), right.sum()
        g = lambda c: 1 - np.sum((c / c.sum()) ** 2)
        achieved = g(tree.counts[0]) - (n_l * g(left) + n_r * g(right)) / n
        assert abs(achieved - gain) <= 1e-12


def xor_data(n, rng):
    X = rng.uniform(-1, 1, size=(n, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)
    return X, y


def test_tune_prefers_smallest_depth_on_stump_data():
    X, y = stump_data()
    res = tune_max_depth(X, y, X, y, list(range(1, 11)))
    assert res.best_depth == 1
    assert len(res.table) == 10


def test_tune_on_xor_needs_depth_two(rng):
    X, y = xor_data(400, rng)
    Xd, yd = xor_data(200, rng)
    res = tune_max_depth(X, y, Xd, yd, [1, 2, 3, 4])
    assert res.best_depth >= 2
    assert dict(res.table)[1] <= 0.75
    assert res.best_accuracy > 0.9


def test_truncation_equals_direct_fit(rng):
    X = np.round(rng.normal(size=(120, 5)), 1)
    y = rng.integers(0, 3, 120)
    full = fit(X, y, None, seed=5)
    for d in range(1, 8):
        direct = fit(X, y, d, seed=5)
        cut = truncate(full, d)
        for name in ("feature", "threshold", "left", "right", "counts"):
            np.testing.assert_array_equal(getattr(direct, name), getattr(cut, name))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_training_accuracy_monotone_in_depth(seed):
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(60, 3)), 1)
    y = rng.integers(0, 3, 60)
    accs = [np.mean(predict(fit(X, y, d, seed=seed), X) == y) for d in range(1, 9)]
    assert all(b >= a for a, b in zip(accs, accs[1:]))


def test_seeded_tie_break_varies_with_seed():
    rng = np.random.default_rng(0)
    base = rng.normal(size=(40, 1))
    X = np.hstack([base, base, base])  # identical columns: every split ties three ways
    y = (base[:, 0] > 0).astype(int)
    roots = {int(fit(X, y, 1, seed=s).feature[0]) for s in range(30)}
    assert roots == {0, 1, 2}
    assert fit(X, y, 1, seed=7).feature[0] == fit(X, y, 1, seed=7).feature[0]


def test_fit_errors():
    with pytest.raises(ValueError):
        fit(np.zeros((0, 2)), [])
    with pytest.raises(ValueError):
        fit(np.zeros((3, 2)), [1, 2])
    tree = fit(np.array([[0.0], [1.0]]), [0, 1])
    with pytest.raises(ValueError):
        predict(tree, np.zeros(2))


def test_render_lists_leaf_counts(tax):
    X = np.eye(25)[[0, 1, 0, 1]]
    tree = fit(X, ["spoof", "bonafide", "spoof", "bonafide"], 2)
    text = render(tree, tax.feature_names())
    assert "Text(Inputs)" in text or "Speech(Inputs)" in text
    assert "bonafide=2" in text and "spoof=2" in text
