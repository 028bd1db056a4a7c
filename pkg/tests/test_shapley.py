import numpy as np
import pytest

from oracles import enumerate_shapley
from probattr.dtree import DecisionTree, fit, predict_dist, predict_index
from probattr.shapley import (ShapleyReport, base_value, importance_report, shapley_batch,
                              shapley_exact, shapley_tree, tree_output)


def random_instance(rng, max_features=10):
    n_features = int(rng.integers(1, max_features + 1))
    n = int(rng.integers(10, 60))
    X = np.round(rng.normal(size=(n, n_features)), 1)
    y = rng.integers(0, int(rng.integers(2, 4)), n)
    tree = fit(X, y, int(rng.integers(1, 7)), seed=int(rng.integers(100)))
    x = np.round(rng.normal(size=n_features), 1)
    background = np.round(rng.normal(size=(int(rng.integers(1, 9)), n_features)), 1)
    return tree, x, background


def test_tree_matches_exact_enumeration():
    rng = np.random.default_rng(21)
    for _ in range(50):
        tree, x, bg = random_instance(rng)
        cls = int(predict_index(tree, x))
        exact = shapley_exact(tree_output(tree, cls), x, bg)
        fast = shapley_tree(tree, x, bg)
        np.testing.assert_allclose(fast, exact, rtol=0, atol=1e-9)


def test_vectorised_exact_matches_plain_enumeration(rng):
    tree, x, bg = random_instance(rng, max_features=5)
    cls = int(predict_index(tree, x))

    def value(S):
        hybrid = bg.copy()
        for j in S:
            hybrid[:, j] = x[j]
        return float(np.mean(predict_dist(tree, hybrid)[:, cls]))

    np.testing.assert_allclose(shapley_exact(tree_output(tree, cls), x, bg),
                               enumerate_shapley(value, x.size), atol=1e-12)


def test_hand_enumerated_stump():
    X = np.array([[0.0], [1.0]])
    tree = fit(X, ["A", "B"], 1)
    assert tree.threshold[0] == 0.5
    x, bg = np.array([1.0]), X
    # S = {} gives mean P(B) over background = 0.5; S = {0} gives P(B | x) = 1
    phi = shapley_tree(tree, x, bg)
    assert phi[0] == pytest.approx(0.5, abs=1e-15)
    assert shapley_exact(tree_output(tree, 1), x, bg)[0] == pytest.approx(0.5, abs=1e-15)


def test_efficiency_on_random_queries():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(200, 8))
    y = (X[:, 0] + X[:, 1] * X[:, 2] > 0).astype(int) + (X[:, 3] > 1)
    tree = fit(X, y, 6, seed=1)
    bg = rng.normal(size=(30, 8))
    for x in rng.normal(size=(1000, 8)):
        cls = int(predict_index(tree, x))
        phi = shapley_tree(tree, x, bg)
        f_x = predict_dist(tree, x)[cls]
        assert abs(phi.sum() - (f_x - base_value(tree, bg, cls))) <= 1e-9


def test_null_player_exact(rng):
    X = rng.normal(size=(80, 6))
    y = (X[:, 2] > 0).astype(int) + (X[:, 4] > 0.5)
    tree = fit(X, y, 4)
    unused = sorted(set(range(6)) - tree.used_features())
    assert unused
    for x in rng.normal(size=(20, 6)):
        cls = int(predict_index(tree, x))
        phi = shapley_tree(tree, x, X[:10])
        exact = shapley_exact(tree_output(tree, cls), x, X[:10])
        assert np.all(phi[unused] == 0.0)
        assert np.all(exact[unused] == 0.0)


def test_no_split_tree_gives_zeros():
    tree = fit(np.zeros((5, 3)), [0, 1, 0, 1, 1], 4)
    assert tree.n_nodes == 1
    np.testing.assert_array_equal(shapley_tree(tree, np.ones(3), np.zeros((4, 3))), 0.0)


def and_tree():
    # x0 > .5 and x1 > .5 -> class 1, built symmetrically by hand
    feature = np.array([0, 1, -1, -1, 1, -1, -1])
    threshold = np.array([0.5, 0.5, 0, 0, 0.5, 0, 0])
    left = np.array([1, 2, -1, -1, 5, -1, -1])
    right = np.array([4, 3, -1, -1, 6, -1, -1])
    counts = np.array([[3, 1], [2, 0], [1, 0], [1, 0], [1, 1], [1, 0], [0, 1]])
    return DecisionTree(feature, threshold, left, right, counts, 3, [0, 1])


def test_symmetry_on_symmetric_game():
    tree = and_tree()
    bg = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 5.0]])
    phi = shapley_tree(tree, np.array([1.0, 1.0, 3.0]), bg, cls=1)
    assert abs(phi[0] - phi[1]) <= 1e-9
    assert phi[2] == 0.0


def test_symmetry_for_duplicated_columns_across_tie_orders():
    rng = np.random.default_rng(2)
    base = rng.normal(size=(60, 1))
    X = np.hstack([base, base, rng.normal(size=(60, 1))])
    y = (base[:, 0] > 0.2).astype(int)
    by_root = {}
    for seed in range(40):
        tree = fit(X, y, 3, seed=seed)
        by_root.setdefault(int(tree.feature[0]), tree)
    assert {0, 1} <= set(by_root)
    bg = X[:15]
    for x in X[20:40]:
        a = shapley_tree(by_root[0], x, bg)
        b = shapley_tree(by_root[1], x, bg)
        # each tie order credits one copy; averaged over both the copies are equal
        assert abs((a[0] + b[0]) - (a[1] + b[1])) <= 1e-9


def test_errors():
    tree = fit(np.array([[0.0], [1.0]]), [0, 1])
    with pytest.raises(ValueError):
        shapley_tree(tree, np.zeros(1), np.zeros((0, 1)))
    with pytest.raises(ValueError):
        shapley_exact(lambda X: X[:, 0], np.zeros(21), np.zeros((1, 21)))
    with pytest.raises(ValueError):
        shapley_exact(lambda X: X[:, 0], np.zeros(2), np.zeros((0, 2)))


def test_batch_matches_single(rng):
    tree, x, bg = random_instance(rng)
    X = np.vstack([x, x + 0.3])
    out = shapley_batch(tree, X, bg)
    np.testing.assert_array_equal(out[0], shapley_tree(tree, x, bg))


def test_report_single_run_is_mean_abs():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(100, 4))
    y = (X[:, 1] > 0).astype(int)
    Xd = rng.normal(size=(30, 4))
    rep = importance_report(X, y, Xd, 3, [0], ["a", "b", "c", "d"])
    tree = fit(X, y, 3, seed=0)
    expected = np.abs(shapley_batch(tree, Xd, Xd)).mean(axis=0)
    np.testing.assert_array_equal(rep.mean_abs, expected)
    assert rep.rows()[0][0] == "b"
    assert len(rep.rows()) == 4


def test_report_ranks_generating_attribute_first(tax):
    rng = np.random.default_rng(6)
    X = rng.dirichlet(np.ones(25), size=300)
    y = np.where(X[:, 17] > np.median(X[:, 17]), "spoof", "bonafide")
    rep = importance_report(X[:200], y[:200], X[200:], None, [0, 1, 2, 3, 4], tax.feature_names(),
                            tax.feature_sets(), positive_class="spoof")
    rows = rep.rows()
    assert len(rows) == 25
    assert rows[0][0] == tax.feature_names()[17]
    assert rep.per_run.shape == (5, 25)
    assert rep.to_csv().splitlines()[0] == "attribute,set,mean_abs_shapley,rank"
    assert len(rep.to_csv().splitlines()) == 26


def test_report_validates_shapes():
    with pytest.raises(ValueError):
        ShapleyReport(["a"], [""], [], np.zeros((0, 1)))
