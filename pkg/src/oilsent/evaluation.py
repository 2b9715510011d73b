"""Expanding-window cross-validation, ranking metrics and the feature-set comparison."""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import gbdt, tpe
from .features import FeatureMatrix
from .ingestion import WeekKey, atomic_write_text

logger = logging.getLogger(__name__)

METRICS = ("auroc", "accuracy", "ic")


class MetricUndefined(ValueError):
    pass


@dataclass(frozen=True)
class Fold:
    train: np.ndarray
    test: np.ndarray


def expanding_splits(n_weeks: int, k: int = 5, min_train_fraction: float = 0.4) -> list[Fold]:
    if k < 2:
        raise ValueError("need k >= 2 folds")
    initial = math.ceil(min_train_fraction * n_weeks)
    if initial < 1 or n_weeks < k + initial:
        raise ValueError(f"{n_weeks} weeks cannot hold {k} folds after {initial} training weeks")
    base, extra = divmod(n_weeks - initial, k)
    folds = []
    start = initial
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(Fold(np.arange(start), np.arange(start, start + size)))
        start += size
    return folds


def rank_average(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(x.size)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(labels: Sequence[int], scores: Sequence[float]) -> float:
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=float)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefined("AUROC needs both classes")
    r = rank_average(s)
    u = r[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def prior_matched_accuracy(test_labels: Sequence[int], test_scores: Sequence[float],
                           train_positive_rate: float) -> float:
    y = np.asarray(test_labels)
    s = np.asarray(test_scores, dtype=float)
    if not 0 < train_positive_rate < 1:
        raise ValueError("train_positive_rate must lie in (0, 1)")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    n = y.size
    k = math.floor(train_positive_rate * n + 0.5)
    order = np.lexsort((np.arange(n), -s))  # highest score first, earlier week on ties
    pred = np.zeros(n, dtype=int)
    pred[order[:k]] = 1
    return float((pred == y).mean())


def spearman_ic(predicted: Sequence[float], realized: Sequence[float]) -> float:
    a = np.asarray(predicted, dtype=float)
    b = np.asarray(realized, dtype=float)
    if a.size != b.size or a.size < 3:
        raise ValueError("need two equal-length series of at least 3 values")
    ra, rb = rank_average(a), rank_average(b)
    da, db = ra - ra.mean(), rb - rb.mean()
    denom = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if denom == 0:
        raise MetricUndefined("IC undefined for constant ranks")
    return max(-1.0, min(1.0, float(np.dot(da, db)) / denom))


# --------------------------------------------------------------------------
# Model comparison
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalConfig:
    k: int = 5
    min_train_fraction: float = 0.4
    inner_k: int = 3
    n_trials: int = 50
    tpe: tpe.TPEConfig = field(default_factory=tpe.TPEConfig)
    max_bins: int = 64


@dataclass
class FoldResult:
    fold: int
    train_weeks: list[WeekKey]
    test_weeks: list[WeekKey]
    best_params: dict
    probs: np.ndarray
    labels: np.ndarray
    returns: np.ndarray
    metrics: dict[str, float | None]
    study: list[tpe.Trial] = field(default_factory=list, repr=False)
    ensemble: gbdt.BoostedEnsemble | None = field(default=None, repr=False)


@dataclass
class MetricsReport:
    feature_set: str
    folds: list[FoldResult]

    def values(self, metric: str) -> list[float]:
        return [f.metrics[metric] for f in self.folds if f.metrics[metric] is not None]

    def mean(self, metric: str) -> float | None:
        v = self.values(metric)
        return float(np.mean(v)) if v else None

    def std(self, metric: str) -> float | None:
        v = self.values(metric)
        if not v:
            return None
        return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0


def train_config(params: Mapping, seed: int, max_bins: int = 64) -> gbdt.TrainConfig:
    return gbdt.TrainConfig(
        num_trees=int(params["num_trees"]),
        max_depth=int(params["max_depth"]),
        min_samples_leaf=int(params["min_samples_leaf"]),
        l2_lambda=float(params["l2_lambda"]),
        learning_rate=float(params["learning_rate"]),
        feature_fraction=float(params.get("feature_fraction", 1.0)),
        max_bins=max_bins,
        seed=seed,
    )


def inner_cv_auroc(X: np.ndarray, y: np.ndarray, params: Mapping, cfg: EvalConfig,
                   seed: int) -> float:
    """Mean AUROC over expanding splits of a training prefix (NaN if nothing is scorable)."""
    scores = []
    for fold in expanding_splits(len(y), cfg.inner_k, cfg.min_train_fraction):
        ytr = y[fold.train]
        if ytr.min() == ytr.max():
            continue
        model = gbdt.fit(X[fold.train], ytr, train_config(params, seed, cfg.max_bins))
        try:
            scores.append(auroc(y[fold.test], gbdt.predict_proba(model, X[fold.test])))
        except MetricUndefined:
            continue
    return float(np.mean(scores)) if scores else math.nan


def _metric(fn, *args) -> float | None:
    try:
        return fn(*args)
    except MetricUndefined as exc:
        warnings.warn(f"metric undefined: {exc}")
        return None


def evaluate_feature_set(matrix: FeatureMatrix, labels: np.ndarray, returns: np.ndarray,
                         cfg: EvalConfig, seed: int, set_id: str = "",
                         space: Sequence[tpe.ParamSpec] | None = None) -> MetricsReport:
    """Nested TPE tuning and scoring over outer expanding-window folds.

    ``returns`` holds the realized return each label refers to (the following week's).
    """
    X = matrix.values
    y = np.asarray(labels, dtype=float)
    r = np.asarray(returns, dtype=float)
    if not (X.shape[0] == y.size == r.size):
        raise ValueError("features, labels and returns must be week-aligned")
    space = list(space) if space is not None else tpe.learner_space()
    folds = []
    for i, fold in enumerate(expanding_splits(y.size, cfg.k, cfg.min_train_fraction)):
        assert fold.train.max() < fold.test.min()
        Xtr, ytr = X[fold.train], y[fold.train]
        fold_seed = seed * 1000 + i
        # the objective closes over the training prefix only
        best, history = tpe.optimize(
            lambda p: inner_cv_auroc(Xtr, ytr, p, cfg, fold_seed),
            space, cfg.n_trials, cfg.tpe, np.random.default_rng([seed, i]), record_time=False)
        model = gbdt.fit(Xtr, ytr, train_config(best.params, fold_seed, cfg.max_bins),
                         feature_names=matrix.columns)
        probs = gbdt.predict_proba(model, X[fold.test])
        yte, rte = y[fold.test], r[fold.test]
        metrics = {
            "auroc": _metric(auroc, yte, probs),
            "accuracy": prior_matched_accuracy(yte, probs, float(ytr.mean())),
            "ic": _metric(spearman_ic, probs, rte),
        }
        logger.info("%s fold %d: %s", set_id, i, metrics)
        folds.append(FoldResult(
            fold=i,
            train_weeks=[matrix.weeks[j] for j in fold.train],
            test_weeks=[matrix.weeks[j] for j in fold.test],
            best_params=dict(best.params),
            probs=probs, labels=yte, returns=rte, metrics=metrics,
            study=history, ensemble=model,
        ))
    return MetricsReport(set_id, folds)


def run_model_comparison(matrices: Mapping[str, FeatureMatrix], labels: np.ndarray,
                         returns: np.ndarray, cfg: EvalConfig, seed: int) -> list[MetricsReport]:
    weeks = None
    reports = []
    for set_id, matrix in matrices.items():
        if weeks is None:
            weeks = matrix.weeks
        elif matrix.weeks != weeks:
            raise ValueError(f"{set_id} is not week-aligned with the other sets")
        reports.append(evaluate_feature_set(matrix, labels, returns, cfg, seed, set_id))
    return reports


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def metrics_csv(reports: Sequence[MetricsReport]) -> str:
    """Per-fold rows, then aggregate rows with ``fold`` set to ``mean`` / ``std``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["set", "fold", *METRICS])
    for rep in reports:
        for f in rep.folds:
            w.writerow([rep.feature_set, f.fold, *(_fmt(f.metrics[m]) for m in METRICS)])
    for rep in reports:
        w.writerow([rep.feature_set, "mean", *(_fmt(rep.mean(m)) for m in METRICS)])
        w.writerow([rep.feature_set, "std", *(_fmt(rep.std(m)) for m in METRICS)])
    return buf.getvalue()


def predictions_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["set", "fold", "iso_week", "predicted_prob", "label", "realized_return"])
    for rep in reports:
        for f in rep.folds:
            for wk, p, yv, rv in zip(f.test_weeks, f.probs, f.labels, f.returns):
                w.writerow([rep.feature_set, f.fold, str(wk), repr(float(p)), int(yv),
                            repr(float(rv))])
    return buf.getvalue()


def read_metrics_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for m in METRICS:
            row[m] = float(row[m]) if row[m] != "" else None
    return rows


def read_predictions_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["fold"] = int(row["fold"])
        row["predicted_prob"] = float(row["predicted_prob"])
        row["label"] = int(row["label"])
        row["realized_return"] = float(row["realized_return"])
    return rows


def write_metrics(path: Path, reports: Sequence[MetricsReport]) -> None:
    atomic_write_text(path, metrics_csv(reports))


def write_predictions(path: Path, reports: Sequence[MetricsReport]) -> None:
    atomic_write_text(path, predictions_csv(reports))
