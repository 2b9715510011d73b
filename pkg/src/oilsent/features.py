"""Weekly aggregation of article sentiment, feature-set assembly and descriptive statistics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .extraction.scores import CHAT_MODELS, MODEL_IDS, SentimentVector
from .ingestion import WeekKey, atomic_write_text

MODEL_PREFIX = {"llm_a": "gpt", "llm_b": "llama", "classifier": "finbert", "vendor": "av"}

_CHAT_COLUMNS = (
    "article_count", "relevance_mean", "polarity_mean", "intensity_mean", "uncertainty_mean",
    "forwardness_mean", "polarity_std", "uncertainty_std", "polarity_momentum",
    "uncertainty_momentum", "forwardness_momentum",
)
MODEL_COLUMNS = {
    "llm_a": _CHAT_COLUMNS,
    "llm_b": _CHAT_COLUMNS,
    "classifier": ("article_count", "polarity_mean", "polarity_std", "intensity_mean",
                   "polarity_momentum"),
    "vendor": ("article_count", "polarity_mean", "polarity_std", "polarity_momentum"),
}


def model_feature_names(model_id: str) -> list[str]:
    prefix = MODEL_PREFIX[model_id]
    return [f"{prefix}_{c}" for c in MODEL_COLUMNS[model_id]]


ALL_FEATURES = [name for m in MODEL_IDS for name in model_feature_names(m)]

FEATURE_SETS = {
    "av_baseline": ("vendor",),
    "tradition": ("vendor", "classifier"),
    "gpt": ("llm_a",),
    "llama": ("llm_b",),
    "llm": ("llm_a", "llm_b"),
    "gpt_finbert": ("llm_a", "classifier"),
}


def feature_set_columns(set_id: str) -> list[str]:
    if set_id not in FEATURE_SETS:
        raise ValueError(f"unknown feature set {set_id!r}")
    return [name for m in FEATURE_SETS[set_id] for name in model_feature_names(m)]


@dataclass(frozen=True)
class WeeklyAggregate:
    week: Optional[WeekKey]
    model_id: str
    article_count: int = 0
    relevance_mean: Optional[float] = None
    polarity_mean: Optional[float] = None
    intensity_mean: Optional[float] = None
    uncertainty_mean: Optional[float] = None
    forwardness_mean: Optional[float] = None
    polarity_std: Optional[float] = None
    uncertainty_std: Optional[float] = None
    polarity_momentum: Optional[float] = None
    uncertainty_momentum: Optional[float] = None
    forwardness_momentum: Optional[float] = None

    def features(self) -> dict[str, Optional[float]]:
        prefix = MODEL_PREFIX[self.model_id]
        return {f"{prefix}_{c}": getattr(self, c) for c in MODEL_COLUMNS[self.model_id]}


def relevance_weighted_mean(values: Sequence[Optional[float]],
                            weights: Sequence[Optional[float]]) -> Optional[float]:
    if len(values) != len(weights):
        raise ValueError("values and weights differ in length")
    pairs = [(v, w) for v, w in zip(values, weights) if v is not None and w is not None]
    if not pairs:
        return None
    if any(w < 0 for _, w in pairs):
        raise ValueError("weights must be nonnegative")
    x = np.array([v for v, _ in pairs], dtype=float)
    w = np.array([w for _, w in pairs], dtype=float)
    total = w.sum()
    if total == 0:
        return None
    return float(np.dot(w, x) / total)


def _sample_std(values: Iterable[Optional[float]]) -> Optional[float]:
    x = np.array([v for v in values if v is not None], dtype=float)
    if x.size == 0:
        return None
    if x.size == 1:
        return 0.0
    return float(np.std(x, ddof=1))


def _plain_mean(values: Iterable[Optional[float]]) -> Optional[float]:
    x = [v for v in values if v is not None]
    return float(np.mean(x)) if x else None


def aggregate_week(vectors: Sequence[SentimentVector], model_id: str,
                   week: WeekKey | None = None) -> WeeklyAggregate:
    if any(v.model_id != model_id for v in vectors):
        raise ValueError("vectors mix models")
    if not vectors:
        return WeeklyAggregate(week, model_id)
    if model_id in CHAT_MODELS:
        weights = [v.relevance for v in vectors]
        relevance_mean = _plain_mean(weights)
    else:
        weights = [1.0] * len(vectors)
        relevance_mean = None

    def wmean(dim: str) -> Optional[float]:
        return relevance_weighted_mean([v.get(dim) for v in vectors], weights)

    return WeeklyAggregate(
        week=week,
        model_id=model_id,
        article_count=len(vectors),
        relevance_mean=relevance_mean,
        polarity_mean=wmean("polarity"),
        intensity_mean=wmean("intensity"),
        uncertainty_mean=wmean("uncertainty"),
        forwardness_mean=wmean("forwardness"),
        polarity_std=_sample_std(v.polarity for v in vectors),
        uncertainty_std=_sample_std(v.uncertainty for v in vectors),
    )


def momentum_features(aggregates: Sequence[WeeklyAggregate]) -> list[WeeklyAggregate]:
    """First differences of the polarity, uncertainty and forwardness means.

    Differences are taken against the previous week that had any articles; empty weeks
    carry no momentum.
    """
    weeks = [a.week for a in aggregates]
    if any(weeks[i] is not None and weeks[i + 1] is not None and not weeks[i] < weeks[i + 1]
           for i in range(len(weeks) - 1)):
        raise ValueError("aggregates must be sorted by week")
    out = []
    prev = None
    for agg in aggregates:
        if agg.article_count == 0:
            out.append(replace(agg, polarity_momentum=None, uncertainty_momentum=None,
                               forwardness_momentum=None))
            continue
        diffs = {}
        for dim in ("polarity", "uncertainty", "forwardness"):
            cur = getattr(agg, f"{dim}_mean")
            old = getattr(prev, f"{dim}_mean") if prev is not None else None
            diffs[f"{dim}_momentum"] = cur - old if cur is not None and old is not None else None
        out.append(replace(agg, **diffs))
        prev = agg
    return out


def weekly_aggregates(vectors: Sequence[SentimentVector], article_weeks: Mapping[str, WeekKey],
                      weeks: Sequence[WeekKey], model_id: str) -> list[WeeklyAggregate]:
    """Aggregates for every week in ``weeks`` (empty weeks kept as all-null rows)."""
    by_week: dict[WeekKey, list[SentimentVector]] = {w: [] for w in weeks}
    for v in vectors:
        if v.model_id != model_id:
            continue
        wk = article_weeks[v.article_id]
        if wk in by_week:
            by_week[wk].append(v)
    aggs = [aggregate_week(by_week[w], model_id, w) for w in weeks]
    return momentum_features(aggs)


@dataclass
class FeatureMatrix:
    weeks: list[WeekKey]
    columns: list[str]
    values: np.ndarray  # (n_weeks, n_columns), NaN marks missing

    def select(self, columns: Sequence[str]) -> "FeatureMatrix":
        idx = [self.columns.index(c) for c in columns]
        return FeatureMatrix(list(self.weeks), list(columns), self.values[:, idx].copy())

    def rows_for(self, weeks: Sequence[WeekKey]) -> "FeatureMatrix":
        pos = {w: i for i, w in enumerate(self.weeks)}
        missing = [str(w) for w in weeks if w not in pos]
        if missing:
            raise ValueError(f"feature matrix lacks weeks {missing[:5]}")
        return FeatureMatrix(list(weeks), list(self.columns),
                             self.values[[pos[w] for w in weeks]].copy())


def build_full_matrix(aggregates_by_model: Mapping[str, Sequence[WeeklyAggregate]],
                      weeks: Sequence[WeekKey]) -> FeatureMatrix:
    """All 31 columns, one row per week."""
    cols = []
    blocks = []
    for model_id in MODEL_IDS:
        aggs = aggregates_by_model[model_id]
        if [a.week for a in aggs] != list(weeks):
            raise ValueError(f"{model_id} aggregates are not aligned with the week range")
        names = model_feature_names(model_id)
        block = np.array([[_nan(a.features()[n]) for n in names] for a in aggs], dtype=float)
        blocks.append(block.reshape(len(weeks), len(names)))
        cols.extend(names)
    return FeatureMatrix(list(weeks), cols, np.hstack(blocks))


def assemble_feature_matrix(aggregates_by_model: Mapping[str, Sequence[WeeklyAggregate]],
                            set_id: str, label_weeks: Sequence[WeekKey] | None = None
                            ) -> FeatureMatrix:
    columns = feature_set_columns(set_id)
    first = next(iter(aggregates_by_model.values()))
    weeks = [a.week for a in first]
    full = build_full_matrix(aggregates_by_model, weeks).select(columns)
    return full.rows_for(label_weeks) if label_weeks is not None else full


def _nan(v: Optional[float]) -> float:
    return math.nan if v is None else float(v)


def _fmt(v: float, column: str) -> str:
    if math.isnan(v):
        return ""
    if column.endswith("article_count"):
        return str(int(v))
    return repr(float(v))


def feature_matrix_csv(matrix: FeatureMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iso_week", *matrix.columns])
    for wk, row in zip(matrix.weeks, matrix.values):
        writer.writerow([str(wk), *(_fmt(v, c) for v, c in zip(row, matrix.columns))])
    return buf.getvalue()


def write_feature_matrix(path: Path, matrix: FeatureMatrix) -> None:
    atomic_write_text(path, feature_matrix_csv(matrix))


def read_feature_matrix(path: Path) -> FeatureMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "iso_week":
            raise ValueError(f"{path}: first column must be iso_week")
        weeks, rows = [], []
        for rec in reader:
            weeks.append(WeekKey.parse(rec[0]))
            rows.append([float(x) if x != "" else math.nan for x in rec[1:]])
    values = np.array(rows, dtype=float).reshape(len(weeks), len(header) - 1)
    return FeatureMatrix(weeks, header[1:], values)


# --------------------------------------------------------------------------
# Descriptive analytics
# --------------------------------------------------------------------------


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    if denom == 0:
        return math.nan
    return max(-1.0, min(1.0, float(np.dot(dx, dy)) / denom))


def polarity_corr_matrix(vectors: Sequence[SentimentVector],
                         models: Sequence[str] = MODEL_IDS) -> np.ndarray:
    """Pairwise-complete Pearson correlation of article polarity between models."""
    pol: dict[str, dict[str, float]] = {m: {} for m in models}
    for v in vectors:
        if v.model_id in pol and v.polarity is not None:
            pol[v.model_id][v.article_id] = v.polarity
    k = len(models)
    out = np.full((k, k), math.nan)
    for i, a in enumerate(models):
        for j, b in enumerate(models):
            if j < i:
                continue
            common = sorted(pol[a].keys() & pol[b].keys())
            if len(common) < 2:
                continue
            if i == j:
                out[i, j] = 1.0
                continue
            x = np.array([pol[a][c] for c in common])
            y = np.array([pol[b][c] for c in common])
            out[i, j] = out[j, i] = _pearson(x, y)
    return out


STAT_NAMES = ("mean", "std", "min", "q25", "median", "q75", "max")


def distribution_stats(values: Sequence[float]) -> dict[str, float]:
    x = np.asarray([v for v in values if v is not None], dtype=float)
    if x.size == 0:
        raise ValueError("no values")
    q25, med, q75 = np.quantile(x, [0.25, 0.5, 0.75])
    return {
        "mean": float(x.mean()),
        "std": float(x.std(ddof=1)) if x.size > 1 else 0.0,
        "min": float(x.min()),
        "q25": float(q25),
        "median": float(med),
        "q75": float(q75),
        "max": float(x.max()),
    }


def dimension_quartiles(aggregates: Sequence[WeeklyAggregate]) -> dict[str, dict[str, float]]:
    """Five-number summaries of each weekly mean dimension (box-plot source)."""
    out = {}
    for dim in ("relevance", "polarity", "intensity", "uncertainty", "forwardness"):
        vals = [getattr(a, f"{dim}_mean") for a in aggregates]
        vals = [v for v in vals if v is not None]
        if not vals:
            continue
        s = distribution_stats(vals)
        out[dim] = {k: s[k] for k in ("min", "q25", "median", "q75", "max")}
    return out
