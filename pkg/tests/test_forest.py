"""Forest regression: CART splits against a reference implementation,
bagging behavior, estimator API, and deterministic splitting utilities.

The reference tree builder below re-implements the split search as plain
recursion with scalar loops. Its floating-point expressions deliberately
mirror the library's formulas term by term: deep in a tree, the same row
partition is often reachable through several features (a true tie in
split error), and the comparison can only be bit-exact if both sides
round identically before the tie-break. Arithmetic *correctness* is
pinned independently by the hand-computed cases, which need no tie-breaks.
"""

import numpy as np
import pytest

from farmrules.forest import (
    LEAF,
    Dataset,
    RandomForestRegressor,
    fit_forest,
    train_test_split,
)
from farmrules.validation import NotFittedError


def ref_build(X, y, idx, min_leaf):
    """Reference CART node: documented rules, recursive structure."""
    y_node = y[idx]
    n = len(idx)
    total = float(np.add.reduce(y_node))
    total_sq = float(np.add.reduce(y_node * y_node))
    node = {"value": total / n, "n": n}
    if n < 2 * min_leaf:
        return node
    sse_node = max(total_sq - total * total / n, 0.0)
    if sse_node <= 0.0:
        return node
    best = None  # (sse, feature, threshold)
    for f in range(X.shape[1]):
        col = X[idx, f]
        order = np.argsort(col, kind="stable")
        xs, ys = col[order], y_node[order]
        csum, csq = np.cumsum(ys), np.cumsum(ys * ys)
        for p in range(min_leaf - 1, n - min_leaf):
            if not xs[p] < xs[p + 1]:
                continue
            nl, nr = float(p + 1), float(n - p - 1)
            sl, sql = float(csum[p]), float(csq[p])
            dr = total - sl
            sse = max(sql - sl * sl / nl, 0.0) + max((total_sq - sql) - dr * dr / nr, 0.0)
            if best is None or sse < best[0]:
                best = (sse, f, (xs[p] + xs[p + 1]) / 2.0)
    if best is None:
        return node
    _, f, thr = best
    go_left = X[idx, f] <= thr
    node.update(feature=f, threshold=thr)
    node["left"] = ref_build(X, y, idx[go_left], min_leaf)
    node["right"] = ref_build(X, y, idx[~go_left], min_leaf)
    return node


def ref_predict_one(node, x):
    while "feature" in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return node["value"]


def ref_count_nodes(node):
    if "feature" not in node:
        return 1
    return 1 + ref_count_nodes(node["left"]) + ref_count_nodes(node["right"])


def single_tree_model(X, y, min_leaf=1):
    m = RandomForestRegressor(
        1, max_features="all", min_samples_leaf=min_leaf, bootstrap=False, random_state=0
    )
    return m.fit(X, y)


class TestDataset:
    def test_valid_construction(self):
        d = Dataset(np.zeros((4, 2)), np.arange(4.0), ("a", "b"))
        assert d.n_rows == 4 and d.n_features == 2

    def test_subset(self):
        d = Dataset(np.arange(8.0).reshape(4, 2), np.arange(4.0), ("a", "b"))
        s = d.subset(np.array([2, 0]))
        np.testing.assert_array_equal(s.y, [2.0, 0.0])
        assert s.column_names == ("a", "b")

    def test_name_count_mismatch(self):
        with pytest.raises(ValueError, match="column names"):
            Dataset(np.zeros((4, 2)), np.arange(4.0), ("a",))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((4, 2)), np.arange(3.0), ("a", "b"))

    def test_non_finite_rejected(self):
        X = np.zeros((3, 1))
        X[1, 0] = np.nan
        with pytest.raises(ValueError):
            Dataset(X, np.arange(3.0), ("a",))


class TestCartOracle:
    def test_hand_step_function(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0.0, 0.0, 10.0, 10.0])
        m = single_tree_model(X, y)
        t = m.trees_[0]
        assert t.feature[0] == 0
        assert t.threshold[0] == 1.5
        queries = np.array([[-1.0], [1.4], [1.6], [9.0]])
        np.testing.assert_array_equal(m.predict(queries), [0.0, 0.0, 10.0, 10.0])
        # variance removed entirely by the root split, scaled by 1/n
        assert t.impurity_decrease[0] == pytest.approx(100.0 / 4.0)
        np.testing.assert_array_equal(m.feature_importances_, [1.0])

    @pytest.mark.parametrize("min_leaf", [1, 4])
    def test_matches_reference_on_random_data(self, min_leaf):
        rng = np.random.default_rng(42)
        for trial in range(5):
            X = rng.normal(size=(40, 3))
            y = rng.normal(size=40)
            m = single_tree_model(X, y, min_leaf)
            ref = ref_build(X, y, np.arange(40), min_leaf)
            assert m.trees_[0].n_nodes == ref_count_nodes(ref), trial
            queries = np.vstack([X, rng.normal(size=(60, 3))])
            want = np.array([ref_predict_one(ref, q) for q in queries])
            np.testing.assert_allclose(m.predict(queries), want, rtol=1e-12, atol=1e-12)

    def test_leaf_sizes_respect_minimum(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(60, 4))
        y = rng.normal(size=60)
        for min_leaf in (1, 3, 7):
            m = single_tree_model(X, y, min_leaf)
            t = m.trees_[0]
            leaves = t.feature == LEAF
            assert np.all(t.n_samples[leaves] >= min_leaf)

    def test_node_numbering_and_root_stats(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(30, 2))
        y = rng.normal(size=30)
        m = single_tree_model(X, y, 3)
        t = m.trees_[0]
        assert t.n_samples[0] == 30
        assert t.value[0] == pytest.approx(y.mean())
        internal = np.flatnonzero(t.feature != LEAF)
        for i in internal:
            assert t.left[i] > i  # children are allocated after their parent
            assert t.right[i] == t.left[i] + 1  # siblings are adjacent
            assert t.n_samples[t.left[i]] + t.n_samples[t.right[i]] == t.n_samples[i]

    def test_zero_gain_split_unlocks_interactions(self):
        # y = x1 * x2 on +/-1: no single first split reduces SSE, yet the
        # relationship is exactly representable two levels down.
        rng = np.random.default_rng(3)
        X = rng.choice([-1.0, 1.0], size=(80, 2))
        y = X[:, 0] * X[:, 1]
        m = single_tree_model(X, y, 1)
        np.testing.assert_allclose(m.predict(X), y, atol=1e-12)
        assert m.trees_[0].n_nodes > 1


class TestForestBehavior:
    def test_linear_signal_r2(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(-1, 1, size=(200, 1))
        y = 2.0 * X[:, 0]
        m = RandomForestRegressor(
            30, max_features="all", min_samples_leaf=1, random_state=7
        ).fit(X, y)
        pred = m.predict(X)
        r2 = 1.0 - np.sum((pred - y) ** 2) / np.sum((y - y.mean()) ** 2)
        assert r2 > 0.9

    def test_constant_target_collapses_to_leaves(self):
        X = np.random.default_rng(5).normal(size=(50, 3))
        y = np.full(50, 3.25)
        m = RandomForestRegressor(10, random_state=1).fit(X, y)
        np.testing.assert_array_equal(m.predict(X), np.full(50, 3.25))
        assert all(t.n_nodes == 1 for t in m.trees_)
        np.testing.assert_array_equal(m.feature_importances_, np.zeros(3))

    def test_single_tree_memorizes_distinct_rows(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(40, 2))
        y = rng.normal(size=40)
        m = single_tree_model(X, y, 1)
        np.testing.assert_allclose(m.predict(X), y, atol=1e-12)

    def test_prediction_is_mean_of_trees(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(60, 3))
        y = rng.normal(size=60)
        m = RandomForestRegressor(7, random_state=2).fit(X, y)
        queries = rng.normal(size=(10, 3))
        stacked = np.array([t.predict(queries) for t in m.trees_])
        np.testing.assert_allclose(m.predict(queries), stacked.mean(axis=0), rtol=1e-15)

    def test_refit_deterministic_and_seed_sensitive(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(80, 3))
        y = rng.normal(size=80)
        q = rng.normal(size=(20, 3))
        a = RandomForestRegressor(12, random_state=5).fit(X, y).predict(q)
        b = RandomForestRegressor(12, random_state=5).fit(X, y).predict(q)
        c = RandomForestRegressor(12, random_state=6).fit(X, y).predict(q)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_importances_sum_to_one_when_splits_exist(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(100, 4))
        y = X[:, 1] + 0.1 * rng.normal(size=100)
        m = RandomForestRegressor(20, random_state=3).fit(X, y)
        imp = m.feature_importances_
        assert imp.sum() == pytest.approx(1.0)
        assert np.all(imp >= 0.0)
        assert imp.argmax() == 1


class TestOutOfBag:
    def test_oob_indices_well_formed(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(100, 2))
        y = rng.normal(size=100)
        m = RandomForestRegressor(10, random_state=4).fit(X, y)
        for t in m.trees_:
            oob = t.oob_indices
            assert len(oob) > 0
            assert np.all((oob >= 0) & (oob < 100))
            assert np.all(np.diff(oob) > 0)  # sorted, unique
            # with-replacement sampling leaves roughly 1/e of rows out
            assert 10 < len(oob) < 70

    def test_no_bootstrap_means_no_oob(self):
        X = np.random.default_rng(12).normal(size=(30, 2))
        m = RandomForestRegressor(3, bootstrap=False, random_state=0).fit(X, X[:, 0])
        assert all(t.oob_indices.size == 0 for t in m.trees_)


class TestEstimatorApi:
    def test_get_params_round_trip(self):
        m = RandomForestRegressor(9, max_features=2, min_samples_leaf=3, random_state=17)
        p = m.get_params()
        assert p == {
            "n_estimators": 9,
            "max_features": 2,
            "min_samples_leaf": 3,
            "bootstrap": True,
            "random_state": 17,
        }
        clone = RandomForestRegressor(**p)
        assert clone.get_params() == p

    def test_set_params(self):
        m = RandomForestRegressor(5)
        out = m.set_params(n_estimators=11, random_state=3)
        assert out is m
        assert m.n_estimators == 11 and m.random_state == 3
        with pytest.raises(ValueError, match="unknown parameter"):
            m.set_params(depth=3)

    def test_not_fitted_errors(self):
        m = RandomForestRegressor(3)
        with pytest.raises(NotFittedError):
            m.predict(np.zeros((2, 2)))
        with pytest.raises(NotFittedError):
            m.feature_importances_

    def test_predict_feature_count_checked(self):
        X = np.random.default_rng(13).normal(size=(30, 3))
        m = RandomForestRegressor(2, random_state=0).fit(X, X[:, 0])
        with pytest.raises(ValueError, match="features"):
            m.predict(np.zeros((2, 4)))

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"max_features": "half"},
            {"max_features": 0},
            {"max_features": True},
            {"n_estimators": 0},
            {"min_samples_leaf": 0},
        ],
    )
    def test_invalid_parameters_rejected(self, kwargs):
        X = np.zeros((10, 3))
        y = np.arange(10.0)
        with pytest.raises(ValueError):
            RandomForestRegressor(**{"n_estimators": 2, **kwargs}).fit(X, y)

    def test_max_features_resolution(self):
        m = RandomForestRegressor(1)
        assert m._resolve_max_features(9) == 3  # "third"
        assert m.set_params(max_features="all")._resolve_max_features(9) == 9
        assert m.set_params(max_features=None)._resolve_max_features(9) == 9
        assert m.set_params(max_features=4)._resolve_max_features(9) == 4
        assert m.set_params(max_features=99)._resolve_max_features(9) == 9
        assert m.set_params(max_features="third")._resolve_max_features(2) == 1


class TestSplitting:
    def make_data(self, n=50):
        rng = np.random.default_rng(14)
        X = rng.normal(size=(n, 2))
        return Dataset(X, X[:, 0] + X[:, 1], ("a", "b"))

    def test_split_sizes_and_disjointness(self):
        d = self.make_data(50)
        train, test = train_test_split(d, 0.9, seed=0)
        assert train.n_rows == 45 and test.n_rows == 5
        seen = np.concatenate([train.y, test.y])
        np.testing.assert_array_equal(np.sort(seen), np.sort(d.y))

    def test_split_deterministic(self):
        d = self.make_data(50)
        a1, b1 = train_test_split(d, 0.8, seed=3)
        a2, b2 = train_test_split(d, 0.8, seed=3)
        np.testing.assert_array_equal(a1.y, a2.y)
        np.testing.assert_array_equal(b1.y, b2.y)
        a3, _ = train_test_split(d, 0.8, seed=4)
        assert not np.array_equal(a1.y, a3.y)

    def test_split_always_keeps_both_sides_nonempty(self):
        d = self.make_data(2)
        train, test = train_test_split(d, 0.99, seed=0)
        assert train.n_rows == 1 and test.n_rows == 1

    def test_bad_fraction_rejected(self):
        with pytest.raises(ValueError, match="split_fraction"):
            train_test_split(self.make_data(), 1.0, seed=0)

    def test_fit_forest_returns_model_and_held_out(self):
        d = self.make_data(100)
        model, held_out = fit_forest(d, n_trees=5, seed=1, min_samples_leaf=2)
        assert held_out.n_rows == 10
        pred = model.predict(held_out.X)
        assert pred.shape == (10,)
        model2, held_out2 = fit_forest(d, n_trees=5, seed=1, min_samples_leaf=2)
        np.testing.assert_array_equal(pred, model2.predict(held_out2.X))

    def test_fit_forest_needs_rows(self):
        d = Dataset(np.zeros((1, 1)), np.zeros(1), ("a",))
        with pytest.raises(ValueError, match="at least 2 rows"):
            fit_forest(d, n_trees=1)
