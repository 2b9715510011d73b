import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import auroc_pairs, spearman_closed_form
from scipy import stats

from oilsent import evaluation, tpe
from oilsent.evaluation import (
    EvalConfig,
    MetricUndefined,
    auroc,
    expanding_splits,
    prior_matched_accuracy,
    spearman_ic,
)
from oilsent.features import FeatureMatrix
from oilsent.ingestion import WeekKey


def test_expanding_splits_small():
    folds = expanding_splits(10, k=2, min_train_fraction=0.4)
    assert [f.train.tolist() for f in folds] == [[0, 1, 2, 3], list(range(7))]
    assert [f.test.tolist() for f in folds] == [[4, 5, 6], [7, 8, 9]]


def test_expanding_splits_full_size():
    folds = expanding_splits(313, k=5)
    assert len(folds[0].train) == 126
    assert [len(f.test) for f in folds] == [38, 38, 37, 37, 37]
    with pytest.raises(ValueError):
        expanding_splits(313, k=1)
    with pytest.raises(ValueError):
        expanding_splits(6, k=5)


@settings(max_examples=200)
@given(st.integers(7, 2000), st.integers(2, 6), st.floats(0.1, 0.8))
def test_fold_hygiene(n, k, frac):
    if n < k + math.ceil(frac * n):
        return
    folds = expanding_splits(n, k, frac)
    assert folds[-1].test[-1] == n - 1
    for a, b in zip(folds, folds[1:]):
        assert b.test[0] == a.test[-1] + 1
        assert len(b.train) > len(a.train)
    for f in folds:
        assert f.train.max() < f.test.min()
        np.testing.assert_array_equal(f.train, np.arange(f.test[0]))


def test_auroc_examples():
    assert auroc([0, 1, 0, 1], [0.1, 0.9, 0.4, 0.6]) == 1.0
    assert auroc([0, 1, 0, 1], [0.3] * 4) == 0.5
    assert auroc([1, 1, 0, 0], [0.1, 0.2, 0.3, 0.4]) == 0.0
    with pytest.raises(MetricUndefined):
        auroc([1, 1], [0.1, 0.2])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auroc_matches_pair_count(seed):
    rng = random.Random(seed)
    n = rng.randint(2, 200)
    y = [rng.randint(0, 1) for _ in range(n)]
    y[0], y[1] = 0, 1
    s = [rng.randint(0, 20) / 20 for _ in range(n)]  # plenty of ties
    assert abs(auroc(y, s) - auroc_pairs(y, s)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auroc_complement_and_monotone_transform(seed):
    gen = np.random.default_rng(seed)
    y = gen.integers(0, 2, 50)
    y[:2] = [0, 1]
    s = gen.permutation(50).astype(float)
    assert auroc(y, s) + auroc(y, -s) == 1.0
    assert auroc(y, np.exp(s / 10)) == auroc(y, s)


def test_prior_matched_accuracy():
    y = [0, 0, 1, 1]
    assert prior_matched_accuracy(y, [0.1, 0.2, 0.8, 0.9], 0.5) == 1.0
    assert prior_matched_accuracy(y, [0.9, 0.8, 0.2, 0.1], 0.5) == 0.0
    # ties: the earlier week is predicted positive
    assert prior_matched_accuracy([1, 0], [0.5, 0.5], 0.5) == 1.0
    assert prior_matched_accuracy([0, 1], [0.5, 0.5], 0.5) == 0.0
    with pytest.raises(ValueError):
        prior_matched_accuracy(y, [0.1] * 4, 1.0)


def test_prior_matched_share_of_positives():
    n = 1000
    s = np.random.default_rng(0).random(n)
    k = round(166 / 313 * n)
    preds_pos = math.floor(166 / 313 * n + 0.5)
    assert preds_pos == k == 530
    acc_all_pos = prior_matched_accuracy(np.ones(n), s, 166 / 313)
    assert acc_all_pos == pytest.approx(0.530)


def test_spearman_examples():
    assert spearman_ic([0.2, 0.5, 0.9], [-1, 0, 2]) == 1.0
    assert spearman_closed_form([0.2, 0.5, 0.9], [-1, 0, 2]) == 1.0
    assert spearman_ic([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    with pytest.raises(MetricUndefined):
        spearman_ic([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman_ic([1, 2], [1, 2])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_spearman_matches_references(seed):
    gen = np.random.default_rng(seed)
    n = int(gen.integers(3, 200))
    a = gen.integers(0, 10, n).astype(float)
    b = gen.integers(0, 10, n).astype(float)
    if len(set(a)) > 1 and len(set(b)) > 1:
        ref = stats.pearsonr(stats.rankdata(a), stats.rankdata(b))[0]
        assert abs(spearman_ic(a, b) - ref) <= 1e-12
    u, v = gen.permutation(n) + 0.5, gen.permutation(n) * 1.0
    assert abs(spearman_ic(u, v) - spearman_closed_form(list(u), list(v))) <= 1e-12
    assert spearman_ic(np.exp(u / n), v ** 3) == pytest.approx(spearman_ic(u, v), abs=1e-12)


# --------------------------------------------------------------------------
# comparison harness
# --------------------------------------------------------------------------


def _planted(n=90, seed=0, noise_cols=2):
    gen = np.random.default_rng(seed)
    signal = gen.normal(size=n)
    y = (signal + gen.normal(0, 0.6, n) > 0).astype(float)
    r = np.where(y == 1, 1, -1) * (np.abs(gen.normal(0, 0.02, n)) + 1e-3)
    X = np.column_stack([signal] + [gen.normal(size=n) for _ in range(noise_cols)])
    weeks = [WeekKey(2020, 1)]
    for _ in range(n - 1):
        weeks.append(weeks[-1].next())
    return FeatureMatrix(weeks, [f"c{j}" for j in range(X.shape[1])], X), y, r


SMALL = EvalConfig(k=3, inner_k=2, n_trials=4, tpe=tpe.TPEConfig(n_startup=2, n_candidates=8))
FIXED_SPACE = [tpe.ParamSpec("num_trees", "integer_uniform", 10, 30),
               tpe.ParamSpec("learning_rate", "log_uniform", 0.05, 0.3),
               tpe.ParamSpec("max_depth", "integer_uniform", 1, 3),
               tpe.ParamSpec("min_samples_leaf", "integer_uniform", 3, 10),
               tpe.ParamSpec("l2_lambda", "log_uniform", 0.01, 1.0)]


def test_evaluate_feature_set_structure():
    mat, y, r = _planted()
    rep = evaluation.evaluate_feature_set(mat, y, r, SMALL, seed=1, set_id="demo",
                                          space=FIXED_SPACE)
    assert len(rep.folds) == 3
    for f in rep.folds:
        assert max(f.train_weeks) < min(f.test_weeks)
        assert 0 <= f.metrics["auroc"] <= 1 and -1 <= f.metrics["ic"] <= 1
        assert len(f.study) == SMALL.n_trials
        assert ((f.probs > 0) & (f.probs < 1)).all()
    assert rep.mean("auroc") == pytest.approx(np.mean(rep.values("auroc")))
    assert rep.mean("auroc") > 0.6


def test_duplicated_column_gives_identical_metrics():
    mat, y, r = _planted(seed=3)
    dup = FeatureMatrix(mat.weeks, mat.columns + ["c0_copy"],
                        np.column_stack([mat.values, mat.values[:, 0]]))
    a = evaluation.evaluate_feature_set(mat, y, r, SMALL, 5, "a", FIXED_SPACE)
    b = evaluation.evaluate_feature_set(dup, y, r, SMALL, 5, "b", FIXED_SPACE)
    assert [f.metrics for f in a.folds] == [f.metrics for f in b.folds]


def test_undefined_metric_excluded_with_warning():
    mat, y, r = _planted(n=60)
    y = y.copy()
    y[-10:] = 1.0  # last test block has one class only
    with pytest.warns(UserWarning, match="metric undefined"):
        rep = evaluation.evaluate_feature_set(mat, y, r, SMALL, 0, "x", FIXED_SPACE)
    assert rep.folds[-1].metrics["auroc"] is None
    assert len(rep.values("auroc")) == 2


@pytest.mark.filterwarnings("ignore:metric undefined")
def test_metrics_and_predictions_csv_roundtrip(tmp_path):
    mat, y, r = _planted(n=60)
    reps = evaluation.run_model_comparison({"a": mat, "b": mat.select(["c1", "c2"])}, y, r,
                                           SMALL, 2)
    evaluation.write_metrics(tmp_path / "m.csv", reps)
    evaluation.write_predictions(tmp_path / "p.csv", reps)
    rows = evaluation.read_metrics_csv(tmp_path / "m.csv")
    assert [(x["set"], x["fold"]) for x in rows][-4:] == [("a", "mean"), ("a", "std"),
                                                          ("b", "mean"), ("b", "std")]
    assert rows[0]["auroc"] == reps[0].folds[0].metrics["auroc"]
    preds = evaluation.read_predictions_csv(tmp_path / "p.csv")
    assert len(preds) == 2 * sum(len(f.test_weeks) for f in reps[0].folds)
    assert preds[0]["predicted_prob"] == float(reps[0].folds[0].probs[0])
    with pytest.raises(ValueError):
        evaluation.run_model_comparison(
            {"a": mat, "b": FeatureMatrix(mat.weeks[::-1], mat.columns, mat.values)}, y, r,
            SMALL, 0)
