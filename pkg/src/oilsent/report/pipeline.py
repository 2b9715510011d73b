"""Pipeline stages. Each reads and writes only the documented files of a run directory."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import logging
import os
from pathlib import Path

import numpy as np

from .. import evaluation, features, ingestion, shapley, synthetic, tpe
from ..extraction import (
    ChatAdapter,
    ClassifierAdapter,
    ExtractionConfig,
    StubChatAdapter,
    StubClassifierAdapter,
    StubVendorAdapter,
    TokenBucket,
    VendorAdapter,
    extract_corpus,
    read_vector_store,
    write_failures,
    write_vector_store,
)
from ..extraction.scores import MODEL_IDS
from ..gbdt import BoostedEnsemble
from ..ingestion import WeekKey, atomic_write_text
from . import config as runconfig

logger = logging.getLogger(__name__)

RAW_DIR = "corpus/raw"
ARTICLES = "corpus/articles.jsonl"
SAMPLE = "corpus/sample.jsonl"
VECTORS = "extract/vectors.jsonl"
FAILURES = "extract/failures.jsonl"
EXTRACT_CACHE = "cache/extract"
FEATURES = "features/features.csv"
LABELS = "features/labels.csv"
METRICS = "evaluate/metrics.csv"
PREDICTIONS = "evaluate/predictions.csv"
SHAP_VALUES = "explain/shap_values.csv"
SHAP_SUMMARY = "explain/shap_summary.csv"
SHAP_META = "explain/meta.json"


class MissingInputs(RuntimeError):
    def __init__(self, paths: list[str]):
        super().__init__("missing inputs: " + ", ".join(paths))
        self.paths = paths


def require(run_dir: Path, *names: str) -> None:
    missing = [n for n in names if not (Path(run_dir) / n).exists()]
    if missing:
        raise MissingInputs(missing)


def _prices_path(run_dir: Path, cfg: dict) -> Path:
    p = Path(cfg["prices_csv"])
    return p if p.is_absolute() else Path(run_dir) / p


# --------------------------------------------------------------------------
# fetch
# --------------------------------------------------------------------------


def run_fetch(run_dir: Path, cfg: dict, transport=None) -> dict:
    news = cfg["news"]
    client_cfg = ingestion.NewsClientConfig.from_env(
        base_url=news["base_url"], topic=news["topic"], page_size=int(news["page_size"]),
        cache_dir=Path(run_dir) / RAW_DIR,
        corpus_start=dt.date.fromisoformat(cfg["corpus_start"]),
        corpus_end=dt.date.fromisoformat(cfg["corpus_end"]),
        lenient=bool(news["lenient"]), transport=transport,
    )
    raw = ingestion.fetch_corpus(client_cfg, max_in_flight=int(news["max_in_flight"]))
    articles = ingestion.deduplicate(raw)
    sample = ingestion.stratified_sample(articles, float(cfg["sample_fraction"]), int(cfg["seed"]))
    ingestion.write_article_store(Path(run_dir) / ARTICLES, articles)
    ingestion.write_article_store(Path(run_dir) / SAMPLE, sample)
    logger.info("fetched %d articles, %d after dedup, %d sampled", len(raw), len(articles),
                len(sample))
    return {"raw": len(raw), "deduplicated": len(articles), "sampled": len(sample)}


# --------------------------------------------------------------------------
# extract
# --------------------------------------------------------------------------


def _vendor_scores(run_dir: Path) -> dict[str, float]:
    scores: dict[str, float] = {}
    raw_dir = Path(run_dir) / RAW_DIR
    for path in sorted(raw_dir.glob("*.json")):
        scores.update(ingestion.vendor_scores_from_pages(json.loads(path.read_text("utf-8"))))
    return scores


def build_adapters(run_dir: Path, cfg: dict) -> dict:
    seed = int(cfg["seed"])
    budget = int(cfg["extraction"]["char_budget"])
    if cfg["stub"]:
        return {
            "llm_a": StubChatAdapter("llm_a", seed, char_budget=budget),
            "llm_b": StubChatAdapter("llm_b", seed, char_budget=budget),
            "classifier": StubClassifierAdapter(seed),
            "vendor": StubVendorAdapter(seed),
        }
    rate = float(cfg["extraction"]["rate_per_second"])
    ad = cfg["adapters"]
    out = {}
    for m in ("llm_a", "llm_b"):
        out[m] = ChatAdapter(m, ad[m]["base_url"], ad[m]["model"],
                             api_key=os.environ.get(ad[m].get("api_key_env", "")),
                             char_budget=budget, rate_limiter=TokenBucket(rate))
    clf = ad["classifier"]
    out["classifier"] = ClassifierAdapter(clf["base_url"],
                                          api_key=os.environ.get(clf.get("api_key_env", "")),
                                          rate_limiter=TokenBucket(rate))
    out["vendor"] = VendorAdapter(_vendor_scores(run_dir))
    return out


def run_extract(run_dir: Path, cfg: dict, adapters: dict | None = None) -> dict:
    require(run_dir, SAMPLE)
    sample = ingestion.read_article_store(Path(run_dir) / SAMPLE)
    adapters = adapters or build_adapters(run_dir, cfg)
    ex = cfg["extraction"]
    ecfg = ExtractionConfig(cache_dir=Path(run_dir) / EXTRACT_CACHE,
                            max_retries=int(ex["max_retries"]),
                            max_in_flight=int(ex["max_in_flight"]))
    vectors, failures, summary = [], [], {}
    for model_id in MODEL_IDS:
        res = extract_corpus(sample, adapters[model_id], ecfg)
        vectors.extend(res.vectors)
        failures.extend(res.failures)
        summary[model_id] = {"vectors": len(res.vectors), "failures": len(res.failures),
                             "cache_hits": res.cache_hits}
    write_vector_store(Path(run_dir) / VECTORS, vectors)
    write_failures(Path(run_dir) / FAILURES, failures)
    return summary


# --------------------------------------------------------------------------
# features
# --------------------------------------------------------------------------


def build_features(articles, vectors, bars) -> tuple[features.FeatureMatrix, list, list]:
    """Full 31-column matrix on label weeks, plus labels and the returns they refer to."""
    closes = ingestion.weekly_close_series(bars)
    returns = ingestion.weekly_log_returns(closes)
    labels = ingestion.make_labels(returns)
    label_weeks = [w for w, _ in labels]
    realized = [r for _, r in returns[1:]]  # the return each label refers to

    article_weeks = {a.id: ingestion.assign_week(a) for a in articles}
    first = min([label_weeks[0], *article_weeks.values()]) if article_weeks else label_weeks[0]
    weeks = ingestion.week_range(first, label_weeks[-1])
    aggs = {m: features.weekly_aggregates(vectors, article_weeks, weeks, m) for m in MODEL_IDS}
    full = features.build_full_matrix(aggs, weeks).rows_for(label_weeks)
    return full, labels, realized


def labels_csv(labels, realized) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iso_week", "label", "realized_return"])
    for (wk, y), r in zip(labels, realized):
        w.writerow([str(wk), y, repr(float(r))])
    return buf.getvalue()


def read_labels(path: Path) -> tuple[list[WeekKey], np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    weeks = [WeekKey.parse(r["iso_week"]) for r in rows]
    return (weeks, np.array([int(r["label"]) for r in rows], dtype=float),
            np.array([float(r["realized_return"]) for r in rows]))


def run_features(run_dir: Path, cfg: dict) -> dict:
    prices = _prices_path(run_dir, cfg)
    missing = [n for n in (SAMPLE, VECTORS) if not (Path(run_dir) / n).exists()]
    if not prices.exists():
        missing.append(str(cfg["prices_csv"]))
    if missing:
        raise MissingInputs(missing)
    articles = ingestion.read_article_store(Path(run_dir) / SAMPLE)
    vectors = read_vector_store(Path(run_dir) / VECTORS)
    bars = ingestion.read_price_csv(prices)
    full, labels, realized = build_features(articles, vectors, bars)
    features.write_feature_matrix(Path(run_dir) / FEATURES, full)
    atomic_write_text(Path(run_dir) / LABELS, labels_csv(labels, realized))
    ups = sum(y for _, y in labels)
    return {"weeks": len(labels), "up_weeks": ups, "columns": len(full.columns)}


# --------------------------------------------------------------------------
# evaluate / explain
# --------------------------------------------------------------------------


def eval_config(cfg: dict) -> evaluation.EvalConfig:
    cv, t = cfg["cv"], cfg["tpe"]
    return evaluation.EvalConfig(
        k=int(cv["k"]), min_train_fraction=float(cv["min_train_fraction"]),
        inner_k=int(cv["inner_k"]), n_trials=int(t["n_trials"]), max_bins=int(cv["max_bins"]),
        tpe=tpe.TPEConfig(gamma=float(t["gamma"]), n_startup=int(t["n_startup"]),
                          n_candidates=int(t["n_candidates"])),
    )


def load_set_matrices(run_dir: Path, sets) -> tuple[dict, np.ndarray, np.ndarray]:
    require(run_dir, FEATURES, LABELS)
    full = features.read_feature_matrix(Path(run_dir) / FEATURES)
    weeks, y, r = read_labels(Path(run_dir) / LABELS)
    if weeks != full.weeks:
        raise ValueError("features and labels are not week-aligned")
    mats = {s: full.select(features.feature_set_columns(s)) for s in sets}
    return mats, y, r


def run_evaluate(run_dir: Path, cfg: dict) -> list[evaluation.MetricsReport]:
    mats, y, r = load_set_matrices(run_dir, cfg["sets"])
    reports = evaluation.run_model_comparison(mats, y, r, eval_config(cfg), int(cfg["seed"]))
    evaluation.write_metrics(Path(run_dir) / METRICS, reports)
    evaluation.write_predictions(Path(run_dir) / PREDICTIONS, reports)
    for rep in reports:
        for f in rep.folds:
            stem = f"{rep.feature_set}_fold{f.fold}"
            if not cfg.get("record_timings"):
                for t in f.study:
                    t.wall_time = None
            tpe.write_study_log(Path(run_dir) / "evaluate" / "studies" / f"{stem}.jsonl", f.study)
            atomic_write_text(Path(run_dir) / "evaluate" / "models" / f"{stem}.json",
                              f.ensemble.to_json())
    return reports


def run_explain(run_dir: Path, cfg: dict) -> shapley.ShapMatrix:
    set_id = cfg["explain"]["set"]
    ecfg = eval_config(cfg)
    last = ecfg.k - 1
    model_file = f"evaluate/models/{set_id}_fold{last}.json"
    require(run_dir, FEATURES, LABELS, model_file)
    mats, y, _ = load_set_matrices(run_dir, [set_id])
    mat = mats[set_id]
    model = BoostedEnsemble.from_json((Path(run_dir) / model_file).read_text("utf-8"))
    fold = evaluation.expanding_splits(len(y), ecfg.k, ecfg.min_train_fraction)[last]
    background = shapley.choose_background(mat.values[fold.train],
                                           int(cfg["explain"]["background_cap"]), int(cfg["seed"]))
    rows = mat.values[fold.test]
    shap = shapley.tree_shap(model, rows, background)
    local_err = float(np.max(np.abs(shap.base_value + shap.values.sum(axis=1)
                                    - model.margins(rows))))
    keys = [str(mat.weeks[i]) for i in fold.test]
    atomic_write_text(Path(run_dir) / SHAP_VALUES, shapley.shap_values_csv(shap, keys))
    imp = shapley.global_importance(shap)
    atomic_write_text(Path(run_dir) / SHAP_SUMMARY, shapley.importance_csv(imp))
    meta = {"set": set_id, "fold": last, "base_value": shap.base_value,
            "n_explained": len(keys), "n_background": int(background.shape[0]),
            "max_local_accuracy_error": local_err}
    atomic_write_text(Path(run_dir) / SHAP_META, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return shap


# --------------------------------------------------------------------------
# replay
# --------------------------------------------------------------------------

REPLAY_OVERRIDES = {
    "sample_fraction": 0.5,
    "stub": True,
    "prices_csv": "prices.csv",
    "tpe": {"n_trials": 12, "n_startup": 6},
    "explain": {"set": "gpt"},
}


def prepare_replay(run_dir: Path, seed: int, overrides: dict | None = None,
                   n_weeks: int = 320) -> dict:
    """Write a synthetic corpus, prices and config into ``run_dir``."""
    cfg_over = runconfig._merge(REPLAY_OVERRIDES, overrides or {})
    cfg_over["seed"] = seed
    corpus = synthetic.generate(seed, n_weeks=n_weeks,
                                sample_fraction=float(cfg_over["sample_fraction"]))
    start, end = synthetic.corpus_window(corpus)
    cfg_over.setdefault("corpus_start", start.isoformat())
    cfg_over.setdefault("corpus_end", end.isoformat())
    cfg = runconfig.resolve(cfg_over)
    synthetic.write_raw_pages(corpus, Path(run_dir) / RAW_DIR, int(cfg["news"]["page_size"]))
    synthetic.write_prices(corpus, _prices_path(run_dir, cfg))
    runconfig.save(run_dir, cfg)
    return cfg


def _offline_transport():
    import httpx

    def refuse(request):
        raise httpx.ConnectError("replay runs offline", request=request)

    return httpx.MockTransport(refuse)


def run_replay(run_dir: Path, seed: int, overrides: dict | None = None,
               n_weeks: int = 320) -> dict:
    from .bundle import emit_report_bundle

    run_dir = Path(run_dir)
    cfg = prepare_replay(run_dir, seed, overrides, n_weeks)
    summary = {"fetch": run_fetch(run_dir, cfg, transport=_offline_transport())}
    summary["extract"] = run_extract(run_dir, cfg)
    summary["features"] = run_features(run_dir, cfg)
    reports = run_evaluate(run_dir, cfg)
    summary["evaluate"] = {r.feature_set: {m: r.mean(m) for m in evaluation.METRICS}
                           for r in reports}
    run_explain(run_dir, cfg)
    emit_report_bundle(run_dir)
    return summary
