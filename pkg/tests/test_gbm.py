import json
import math

import numpy as np
import pandas as pd
import pytest

from oracles import exhaustive_stump
from statarb import gbm
from statarb.errors import EmptyPanel, InvalidConfig, MissingVariable, SingleClassTrainingSet
from statarb.gbm import BoostedModel, GbmConfig, Variable, bernoulli_deviance, fit, grow_tree, logistic


def planted(n=2000, seed=0, noise=0.1):
    rng = np.random.default_rng(seed)
    X = pd.DataFrame(
        {
            "cr_1": 1 + rng.normal(0, 0.02, n),
            "cr_2": 1 + rng.normal(0, 0.03, n),
            "dsvi_1": rng.normal(0, 1, n),
            "industry": pd.Categorical(rng.choice(["Mining", "Services", "Retail Trade"], n)),
        }
    )
    y = (X["cr_1"] > 1).astype(int).to_numpy()
    flip = rng.random(n) < noise
    y[flip] = 1 - y[flip]
    return X, y


def test_config_validation():
    for bad in (
        dict(n_trees=0),
        dict(shrinkage=0.0),
        dict(shrinkage=1.5),
        dict(bag_fraction=0.0),
        dict(bag_fraction=1.1),
        dict(interaction_depth=0),
        dict(min_node=0),
        dict(depth_mode="leaves"),
    ):
        with pytest.raises(InvalidConfig):
            GbmConfig(**bad)
    assert GbmConfig() == GbmConfig(500, 0.02, 4, 0.5, 10, 0)


def test_fit_errors():
    X = pd.DataFrame({"a": [1.0, 2.0, 3.0]})
    with pytest.raises(SingleClassTrainingSet):
        fit(X, [1, 1, 1], GbmConfig(n_trees=2))
    with pytest.raises(EmptyPanel):
        fit(X.iloc[:0], [], GbmConfig(n_trees=2))


def test_zero_tree_models():
    vars_ = [Variable("a")]
    m = BoostedModel(0.0, [], GbmConfig(n_trees=1), vars_)
    assert m.predict_proba({"a": 3.0}) == 0.5
    m = BoostedModel(math.log(3.0), [], GbmConfig(n_trees=1), vars_)
    assert m.predict_proba({"a": 3.0}) == pytest.approx(0.75, abs=1e-15)


def test_balanced_noise_one_stump():
    rng = np.random.default_rng(3)
    X = pd.DataFrame({"a": rng.normal(size=200), "b": rng.normal(size=200)})
    y = np.array([0, 1] * 100)
    cfg = GbmConfig(n_trees=1, shrinkage=0.1, interaction_depth=1, bag_fraction=1.0, min_node=5)
    m = fit(X, y, cfg)
    assert m.f0 == 0.0
    p = m.predict_proba(X)
    # one Newton step is clamped to 8, so the shift is bounded by shrinkage * 8
    assert np.all(np.abs(p - 0.5) <= logistic(0.1 * 8) - 0.5)


def test_single_split_hand_trace():
    X = pd.DataFrame({"x": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]})
    y = np.array([0, 0, 0, 1, 1, 0])
    cfg = GbmConfig(n_trees=1, shrinkage=0.5, interaction_depth=1, bag_fraction=1.0, min_node=1)
    m = fit(X, y, cfg)
    f0 = math.log(2 / 4)
    p0 = 1 / (1 + math.exp(-f0))
    r = y - p0
    # best least-squares cut, by hand: x <= 3.5 (left mean -1/3, right mean +1/3 -> largest gain)
    tree = m.trees[0]
    assert tree.feature[0] == 0 and tree.threshold[0] == 3.5
    left_val = r[:3].sum() / (3 * p0 * (1 - p0))
    right_val = r[3:].sum() / (3 * p0 * (1 - p0))
    for xv, leaf in ((2.0, left_val), (5.0, right_val)):
        expected = 1 / (1 + math.exp(-(f0 + 0.5 * leaf)))
        assert abs(m.predict_proba({"x": xv}) - expected) <= 1e-12


def test_constant_residuals_single_leaf():
    Z = np.random.default_rng(0).normal(size=(40, 3))
    t = grow_tree(Z, np.full(40, 0.3), GbmConfig(interaction_depth=3, min_node=2))
    assert t.n_nodes == 1 and t.value[0] == pytest.approx(0.3, abs=1e-15)


def test_separable_residuals_recovered():
    x = np.linspace(0, 1, 30)
    Z = np.column_stack([np.random.default_rng(1).normal(size=30), x])
    r = np.where(x <= 0.4, -1.0, 2.0)
    t = grow_tree(Z, r, GbmConfig(interaction_depth=1, min_node=1))
    cut = (x[x <= 0.4].max() + x[x > 0.4].min()) / 2
    assert t.feature[0] == 1 and t.threshold[0] == cut
    assert sorted(t.value[1:]) == [-1.0, 2.0]


def test_stump_matches_exhaustive_search():
    rng = np.random.default_rng(42)
    for trial in range(100):
        Z = rng.normal(size=(50, 4))
        r = rng.normal(size=50)
        min_node = int(rng.integers(1, 6))
        t = grow_tree(Z, r, GbmConfig(interaction_depth=1, min_node=min_node))
        gain, j, cut = exhaustive_stump(Z, r, min_node)
        assert t.feature[0] == j, trial
        assert t.threshold[0] == cut, trial
        assert t.improvement[0] == pytest.approx(gain, rel=1e-9)


def test_depth_two_children_match_exhaustive_search():
    rng = np.random.default_rng(7)
    for _ in range(30):
        Z = rng.normal(size=(50, 3))
        r = rng.normal(size=50)
        t = grow_tree(Z, r, GbmConfig(interaction_depth=2, min_node=3))
        _, j, cut = exhaustive_stump(Z, r, 3)
        assert (t.feature[0], t.threshold[0]) == (j, cut)
        mask = Z[:, j] <= cut
        for child, sel in ((t.left[0], mask), (t.right[0], ~mask)):
            g, jj, cc = exhaustive_stump(Z[sel], r[sel], 3)
            if jj is None:
                assert t.feature[child] == -1
            else:
                assert (t.feature[child], t.threshold[child]) == (jj, cc)


def test_categorical_split_matches_subset_search():
    rng = np.random.default_rng(11)
    for _ in range(20):
        codes = rng.integers(0, 5, 60).astype(float)
        r = rng.normal(size=60) + codes * rng.normal()
        t = grow_tree(codes[:, None], r, GbmConfig(interaction_depth=1, min_node=1), n_levels=np.array([5]))
        present = sorted(set(codes.astype(int).tolist()))
        total = ((r - r.mean()) ** 2).sum()
        best = 0.0
        for mask in range(1, 2 ** len(present) - 1):
            left = {lv for k, lv in enumerate(present) if mask >> k & 1}
            sel = np.isin(codes, list(left))
            sse = ((r[sel] - r[sel].mean()) ** 2).sum() + ((r[~sel] - r[~sel].mean()) ** 2).sum()
            best = max(best, total - sse)
        assert t.improvement[0] == pytest.approx(best, rel=1e-9)


def test_unseen_level_goes_to_larger_child():
    X = pd.DataFrame(
        {"industry": pd.Categorical(["Mining"] * 30 + ["Services"] * 10, categories=["Mining", "Services", "Retail Trade"])}
    )
    y = np.array([0] * 25 + [1] * 5 + [1] * 8 + [0] * 2)
    m = fit(X, y, GbmConfig(n_trees=1, shrinkage=1.0, interaction_depth=1, bag_fraction=1.0, min_node=1))
    assert m.predict_proba({"industry": "Retail Trade"}) == m.predict_proba({"industry": "Mining"})
    assert m.predict_proba({"industry": "Brand New"}) == m.predict_proba({"industry": "Mining"})
    assert m.predict_proba({"industry": "Services"}) != m.predict_proba({"industry": "Mining"})


def test_missing_variable():
    X, y = planted(200)
    m = fit(X, y, GbmConfig(n_trees=3, min_node=5))
    with pytest.raises(MissingVariable):
        m.predict_proba({"cr_1": 1.0})


def test_depth_limit_and_split_mode():
    X, y = planted(800)
    for depth in (1, 2, 4):
        m = fit(X, y, GbmConfig(n_trees=5, interaction_depth=depth, min_node=5, bag_fraction=1.0))
        assert all(t.depth() <= depth for t in m.trees)
        assert any(t.depth() == depth for t in m.trees)
        s = fit(X, y, GbmConfig(n_trees=5, interaction_depth=depth, min_node=5, bag_fraction=1.0, depth_mode="splits"))
        assert all(t.n_splits <= depth for t in s.trees)


def test_min_node_respected():
    X, y = planted(500)
    m = fit(X, y, GbmConfig(n_trees=5, interaction_depth=6, min_node=25, bag_fraction=1.0))
    for t in m.trees:
        leaves = t.feature == -1
        assert (t.n_train[leaves] >= 25).all()


def test_probabilities_strictly_inside_unit_interval():
    X, y = planted(400)
    m = fit(X, y, GbmConfig(n_trees=50, shrinkage=1.0, interaction_depth=4, min_node=1))
    p = m.predict_proba(X)
    assert np.abs(m.decision_function(X)).max() > 40  # saturated in float without a guard
    assert np.isfinite(m.decision_function(X)).all()
    assert ((p > 0) & (p < 1)).all()


def test_deterministic_and_seed_sensitive():
    X, y = planted(600)
    cfg = GbmConfig(n_trees=20, shrinkage=0.1, min_node=5, seed=9)
    a, b = fit(X, y, cfg).to_json(), fit(X, y, cfg).to_json()
    assert a == b
    assert fit(X, y, cfg.replace(seed=10)).to_json() != a


def test_serialization_roundtrip_exact():
    X, y = planted(600)
    m = fit(X, y, GbmConfig(n_trees=15, shrinkage=0.1, min_node=5, seed=2), track_deviance=True)
    text = m.to_json()
    doc = json.loads(text)
    assert doc["format"] == "statarb-gbm" and doc["version"] == 1
    back = BoostedModel.from_json(text)
    assert back.to_json() == text
    assert np.array_equal(back.predict_proba(X), m.predict_proba(X))
    assert back.variable_importance() == m.variable_importance()
    with pytest.raises(ValueError):
        BoostedModel.from_json(json.dumps({**doc, "version": 99}))


def test_deviance_non_increasing_full_bag():
    X, y = planted(500, seed=4)
    m = fit(X, y, GbmConfig(n_trees=500, shrinkage=0.1, interaction_depth=3, bag_fraction=1.0, min_node=5), track_deviance=True)
    dev = np.array(m.train_deviance)
    assert len(dev) == 501
    assert dev[0] == pytest.approx(bernoulli_deviance(y, np.full(len(y), m.f0)), abs=1e-15)
    assert (np.diff(dev) <= 0).all()
    assert dev[-1] < 0.8 * dev[0]


def test_importance_conservation_and_bounds():
    X, y = planted(600)
    m = fit(X, y, GbmConfig(n_trees=30, shrinkage=0.1, min_node=5))
    per_tree = sum(t.improvement[t.feature >= 0].sum() for t in m.trees)
    assert m.raw_importance.sum() == pytest.approx(m.total_improvement, rel=1e-9)
    assert per_tree == pytest.approx(m.total_improvement, rel=1e-9)
    imp = m.variable_importance()
    assert max(imp.values()) == 100.0
    assert all(0 <= v <= 100 for v in imp.values())
    assert max(imp, key=imp.get) == "cr_1"


def test_improvements_equal_recomputed_sse_reduction():
    X, y = planted(300, seed=8)
    m = fit(X, y, GbmConfig(n_trees=6, shrinkage=0.2, interaction_depth=3, bag_fraction=1.0, min_node=5))
    Z = gbm.encode(X, m.variables)
    for k, tree in enumerate(m.trees):
        r = y - m.predict_proba(X, n_trees=k)
        members = {0: np.arange(len(y))}
        stack = [0]
        while stack:
            node = stack.pop()
            if tree.feature[node] < 0:
                continue
            idx = members[node]
            j = tree.feature[node]
            if node in tree.cat_left:
                go = tree.cat_left[node][Z[idx, j].astype(int)]
            else:
                go = Z[idx, j] <= tree.threshold[node]
            members[tree.left[node]], members[tree.right[node]] = idx[go], idx[~go]
            stack += [tree.left[node], tree.right[node]]
            sse = lambda v: float(((v - v.mean()) ** 2).sum())
            expected = sse(r[idx]) - sse(r[idx[go]]) - sse(r[idx[~go]])
            assert tree.improvement[node] == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_only_one_variable_splits():
    rng = np.random.default_rng(5)
    X = pd.DataFrame({"cr_1": rng.normal(size=300), "flat": np.ones(300)})
    y = (X["cr_1"] > 0).astype(int)
    imp = fit(X, y, GbmConfig(n_trees=10, min_node=5)).variable_importance()
    assert imp == {"cr_1": 100.0, "flat": 0.0}


def test_monotone_invariance():
    rng = np.random.default_rng(6)
    X = pd.DataFrame({"a": rng.normal(size=400), "b": rng.uniform(0.1, 3, 400)})
    y = ((X["a"] + np.log(X["b"])) > 0.3).astype(int)
    T = pd.DataFrame({"a": np.exp(X["a"]), "b": X["b"] ** 3})
    # full bag: every row is a training row, so the partitions must coincide
    cfg = GbmConfig(n_trees=10, shrinkage=0.1, interaction_depth=3, bag_fraction=1.0, min_node=5)
    m1, m2 = fit(X, y, cfg), fit(T, y, cfg)
    Z1, Z2 = gbm.encode(X, m1.variables), gbm.encode(T, m2.variables)
    for t1, t2 in zip(m1.trees, m2.trees):
        assert np.array_equal(t1.feature, t2.feature)
        assert np.array_equal(t1.apply(Z1), t2.apply(Z2))
    assert np.allclose(m1.predict_proba(X), m2.predict_proba(T), rtol=0, atol=1e-12)


def test_bagging_uses_fraction_of_rows():
    X, y = planted(400)
    m = fit(X, y, GbmConfig(n_trees=3, bag_fraction=0.5, min_node=5))
    assert all(t.n_train[0] == 200 for t in m.trees)
    m = fit(X, y, GbmConfig(n_trees=3, bag_fraction=1.0, min_node=5))
    assert all(t.n_train[0] == 400 for t in m.trees)


def test_string_columns_are_factors():
    rng = np.random.default_rng(2)
    X = pd.DataFrame({"weekday": rng.choice(["Mon", "Tue", "Fri"], 300)})
    y = (X["weekday"] == "Fri").astype(int)
    m = fit(X, y, GbmConfig(n_trees=20, shrinkage=0.3, min_node=5))
    assert m.variables[0].is_categorical
    assert m.predict_proba({"weekday": "Fri"}) > 0.8 > 0.2 > m.predict_proba({"weekday": "Mon"})
