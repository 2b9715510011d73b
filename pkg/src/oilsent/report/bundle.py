"""Descriptive tables and figures assembled from a finished run directory."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .. import evaluation, features
from ..extraction import read_vector_store
from ..extraction.scores import CHAT_MODELS, MODEL_IDS
from ..ingestion import atomic_write_text
from . import plots
from .pipeline import FEATURES, METRICS, SHAP_SUMMARY, VECTORS, MissingInputs

REPORT_DIR = "report"
POLARITY_STATS = "report/polarity_stats.csv"
POLARITY_CORR = "report/polarity_corr.csv"
POLARITY_CORR_SVG = "report/polarity_corr.svg"
QUARTILES = "report/dimension_quartiles.csv"
QUARTILES_SVG = "report/dimension_boxplot.svg"
METRICS_TABLE = "report/metrics_table.csv"
METRICS_SVG = "report/model_comparison.svg"
SHAP_TABLE = "report/shap_importance.csv"
SHAP_SVG = "report/shap_importance.svg"

BUNDLE_FILES = (POLARITY_STATS, POLARITY_CORR, POLARITY_CORR_SVG, QUARTILES, QUARTILES_SVG,
                METRICS_TABLE, METRICS_SVG, SHAP_TABLE, SHAP_SVG)
DIMENSIONS = ("relevance", "polarity", "intensity", "uncertainty", "forwardness")
QUARTILE_KEYS = ("min", "q25", "median", "q75", "max")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(v) -> str:
    if v is None or math.isnan(v):
        return ""
    return repr(float(v) + 0.0)  # no negative zero


def polarity_stats_csv(vectors) -> str:
    """Rows are statistics, columns are models."""
    stats = {}
    for m in MODEL_IDS:
        vals = [v.polarity for v in vectors if v.model_id == m and v.polarity is not None]
        stats[m] = features.distribution_stats(vals) if vals else None
    rows = [[s, *(_num(stats[m][s]) if stats[m] else "" for m in MODEL_IDS)]
            for s in features.STAT_NAMES]
    return _csv(["stat", *MODEL_IDS], rows)


def polarity_corr_csv(corr: np.ndarray) -> str:
    return _csv(["model", *MODEL_IDS],
                [[m, *(_num(v) for v in row)] for m, row in zip(MODEL_IDS, corr)])


def chat_quartiles(matrix: features.FeatureMatrix) -> dict[str, dict[str, dict[str, float]]]:
    """Five-number summaries of weekly mean dimensions for the chat models."""
    out = {}
    for m in CHAT_MODELS:
        prefix = features.MODEL_PREFIX[m]
        out[m] = {}
        for d in DIMENSIONS:
            col = matrix.values[:, matrix.columns.index(f"{prefix}_{d}_mean")]
            col = col[~np.isnan(col)]
            if col.size:
                s = features.distribution_stats(col.tolist())
                out[m][d] = {k: s[k] for k in QUARTILE_KEYS}
    return out


def quartiles_csv(quartiles) -> str:
    rows = [[m, d, *(_num(q[k]) for k in QUARTILE_KEYS)]
            for m, dims in quartiles.items() for d, q in dims.items()]
    return _csv(["model", "dimension", *QUARTILE_KEYS], rows)


def metrics_table_rows(metric_rows: list[dict]) -> list[dict]:
    """One row per evaluated set with mean and std of each metric, in evaluation order."""
    table: dict[str, dict] = {}
    for r in metric_rows:
        if r["fold"] not in ("mean", "std"):
            continue
        row = table.setdefault(r["set"], {"set": r["set"]})
        for m in evaluation.METRICS:
            row[f"{m}_{r['fold']}"] = r[m]
    return list(table.values())


def metrics_table_csv(rows: list[dict]) -> str:
    cols = [f"{m}_{s}" for m in evaluation.METRICS for s in ("mean", "std")]
    return _csv(["set", *cols], [[r["set"], *(_num(r[c]) for c in cols)] for r in rows])


def read_importance(path: Path) -> tuple[list[str], list[float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [r["feature"] for r in rows], [float(r["mean_abs_shap"]) for r in rows]


def emit_report_bundle(run_dir: Path) -> list[Path]:
    run_dir = Path(run_dir)
    missing = [n for n in (VECTORS, FEATURES, METRICS, SHAP_SUMMARY) if not (run_dir / n).exists()]
    if missing:
        raise MissingInputs(missing)
    vectors = read_vector_store(run_dir / VECTORS)
    matrix = features.read_feature_matrix(run_dir / FEATURES)

    atomic_write_text(run_dir / POLARITY_STATS, polarity_stats_csv(vectors))

    corr = features.polarity_corr_matrix(vectors, MODEL_IDS)
    atomic_write_text(run_dir / POLARITY_CORR, polarity_corr_csv(corr))
    plots.correlation_heatmap(corr, list(MODEL_IDS), run_dir / POLARITY_CORR_SVG)

    quartiles = chat_quartiles(matrix)
    atomic_write_text(run_dir / QUARTILES, quartiles_csv(quartiles))
    plots.dimension_boxplot(quartiles, run_dir / QUARTILES_SVG)

    table = metrics_table_rows(evaluation.read_metrics_csv(run_dir / METRICS))
    atomic_write_text(run_dir / METRICS_TABLE, metrics_table_csv(table))
    plots.metric_bars(table, evaluation.METRICS, run_dir / METRICS_SVG)

    names, values = read_importance(run_dir / SHAP_SUMMARY)
    atomic_write_text(run_dir / SHAP_TABLE, _csv(["feature", "mean_abs_shap"],
                                                 [[n, _num(v)] for n, v in zip(names, values)]))
    plots.importance_bars(names, values, run_dir / SHAP_SVG)
    return [run_dir / f for f in BUNDLE_FILES]
