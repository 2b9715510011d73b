import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import auroc_pairs

from oilsent import gbdt
from oilsent.gbdt import BoostedEnsemble, TrainConfig, Tree


def _noisy(n=150, f=4, seed=0, missing=0.1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, f))
    y = (X[:, 0] + 0.5 * X[:, 1] + rng.normal(0, 1.0, n) > 0).astype(float)
    X[rng.random(X.shape) < missing] = np.nan
    return X, y


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(feature_fraction=0.0)
    with pytest.raises(ValueError):
        TrainConfig(max_bins=1)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)


def test_fit_rejects_bad_labels():
    X = np.zeros((4, 1))
    with pytest.raises(ValueError):
        gbdt.fit(X, np.ones(4))
    with pytest.raises(ValueError):
        gbdt.fit(X, np.array([0, 1, np.nan, 1]))
    with pytest.raises(ValueError):
        gbdt.fit(X, np.array([0, 1, 2, 1]))


def test_depth_zero_predicts_training_rate():
    X = np.arange(20.0).reshape(-1, 1)
    y = np.ones(20)
    y[3] = 0
    model = gbdt.fit(X, y, TrainConfig(num_trees=1, max_depth=0))
    np.testing.assert_allclose(gbdt.predict_proba(model, X), 0.95, atol=1e-12)


def test_separable_reaches_perfect_auroc():
    x = np.linspace(0, 1, 200)
    y = (x > 0.5).astype(float)
    # one bin per distinct value so the cut can land exactly between the classes
    model = gbdt.fit(x.reshape(-1, 1), y, TrainConfig(num_trees=50, max_depth=1, max_bins=256,
                                                      min_samples_leaf=5))
    assert auroc_pairs(y, gbdt.predict_proba(model, x.reshape(-1, 1))) == 1.0


@pytest.mark.parametrize("depth,check", [(1, lambda a: a <= 0.6), (2, lambda a: a >= 0.95)])
def test_xor_needs_depth_two(depth, check):
    rng = np.random.default_rng(5)
    X = rng.uniform(-1, 1, size=(1000, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(float)
    model = gbdt.fit(X, y, TrainConfig(num_trees=50, max_depth=depth, learning_rate=0.3))
    acc = float(((gbdt.predict_proba(model, X) > 0.5) == y).mean())
    assert check(acc), acc


@pytest.mark.parametrize("depth", [1, 3, 6])
def test_loss_non_increasing(depth):
    X, y = _noisy(seed=depth)
    model = gbdt.fit(X, y, TrainConfig(num_trees=60, max_depth=depth, learning_rate=0.3,
                                       min_samples_leaf=2, l2_lambda=1e-3))
    diffs = np.diff(model.loss_history)
    assert (diffs <= 1e-9).all()
    assert model.loss_history[-1] < model.loss_history[0]


def test_refit_bit_identical():
    X, y = _noisy(seed=3)
    cfg = TrainConfig(num_trees=40, max_depth=3, feature_fraction=0.5, seed=11)
    assert gbdt.fit(X, y, cfg).to_json() == gbdt.fit(X, y, cfg).to_json()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_row_permutation_invariance(seed):
    X, y = _noisy(n=80, seed=seed)
    cfg = TrainConfig(num_trees=15, max_depth=3, min_samples_leaf=3, feature_fraction=0.75,
                      seed=seed)
    perm = np.random.default_rng(seed).permutation(len(y))
    a = gbdt.fit(X, y, cfg)
    b = gbdt.fit(X[perm], y[perm], cfg)
    np.testing.assert_array_equal(a.margins(X), b.margins(X))


@pytest.mark.parametrize("scale", [0.001, 3.0, 1e6])
def test_feature_scale_robustness(scale):
    X, y = _noisy(seed=7)
    cfg = TrainConfig(num_trees=25, max_depth=3)
    Xs = X.copy()
    Xs[:, 1] *= scale
    np.testing.assert_array_equal(gbdt.fit(X, y, cfg).margins(X),
                                  gbdt.fit(Xs, y, cfg).margins(Xs))


def test_json_roundtrip_exact():
    X, y = _noisy(seed=2)
    model = gbdt.fit(X, y, TrainConfig(num_trees=10), feature_names=list("abcd"))
    back = BoostedEnsemble.from_json(model.to_json())
    assert back.to_json() == model.to_json()
    np.testing.assert_array_equal(back.margins(X), model.margins(X))
    assert back.feature_names == list("abcd")


def test_predict_margin_by_hand():
    empty = BoostedEnsemble(0.25, 0.1, [], ["a", "b"])
    assert gbdt.predict_margin(empty, [1.0, 2.0]) == 0.25
    t1 = Tree.stump(0, 0.5, -1.0, 2.0, missing_left=False)
    t2 = Tree.stump(1, 0.0, 3.0, -4.0, missing_left=True)
    model = BoostedEnsemble(0.25, 0.1, [t1, t2], ["a", "b"])
    assert gbdt.predict_margin(BoostedEnsemble(0.25, 0.1, [t1], ["a", "b"]),
                               [0.2, 9]) == pytest.approx(0.25 - 0.1)
    # all missing: right leaf (2.0) of the first tree, left leaf (3.0) of the second
    assert gbdt.predict_margin(model, [math.nan, math.nan]) == pytest.approx(0.25 + 0.1 * 5.0)
    with pytest.raises(ValueError):
        gbdt.predict_margin(model, [1.0])


def test_sigmoid_contract():
    assert gbdt.sigmoid(0.0) == 0.5
    p = gbdt.sigmoid(np.array([50.0, -50.0, 800.0, -800.0]))
    assert 1 - 1e-15 <= p[0] < 1 and p[2] < 1 and p[3] > 0 and p[1] > 0
    m = np.linspace(-30, 30, 1001)
    assert (np.diff(gbdt.sigmoid(m)) >= 0).all()


def _best_split_oracle(x, g, h, lam, min_leaf, edges):
    """Exhaustive scan over bin boundaries and both missing directions for one feature."""
    miss = np.isnan(x)
    G, H = g.sum(), h.sum()
    parent = G * G / (H + lam)
    best = (0.0, None, None)
    for k, t in enumerate(edges[:-1]):
        left_obs = ~miss & (x <= t)
        for missing_left in (True, False):
            left = left_obs | (miss & missing_left)
            nl = int(left.sum())
            if nl < min_leaf or len(x) - nl < min_leaf:
                continue
            gl, hl = g[left].sum(), h[left].sum()
            gain = gl * gl / (hl + lam) + (G - gl) ** 2 / (H - hl + lam) - parent
            if gain > best[0] + 1e-12:
                best = (gain, t, missing_left)
    return best


def test_first_split_matches_exhaustive_scan():
    rng = np.random.default_rng(4)
    for trial in range(20):
        n = int(rng.integers(20, 60))
        x = np.round(rng.normal(size=n), 1)
        x[rng.random(n) < 0.2] = np.nan
        y = (rng.random(n) < 0.5).astype(float)
        if y.min() == y.max():
            continue
        model = gbdt.fit(x.reshape(-1, 1), y, TrainConfig(num_trees=1, max_depth=1,
                                                          min_samples_leaf=3, max_bins=256))
        p = y.mean()
        g, h = p - y, np.full(n, p * (1 - p))
        edges = np.unique(x[~np.isnan(x)])
        gain, t, ml = _best_split_oracle(x, g, h, 1.0, 3, edges)
        tree = model.trees[0]
        if t is None:
            assert tree.feature[0] < 0
            continue
        assert tree.threshold[0] == t
        if np.isnan(x).any():
            left = (x <= t) | (np.isnan(x) & ml)
            routed = tree.leaf_index(x.reshape(-1, 1)) == tree.left[0]
            np.testing.assert_array_equal(routed, left)
