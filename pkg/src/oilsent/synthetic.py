"""Synthetic corpus and price series with one planted sentiment signal.

Articles are written as raw monthly feed pages and prices as a daily CSV, so the
replay exercises the same file interfaces as a real run. The planted signal lives
in the stub scores: the relevance-weighted weekly intensity of ``llm_a`` decides the
sign of the next week's return with probability ``follow_prob``.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .extraction.adapters import stub_vector
from .ingestion import (
    Article,
    PriceBar,
    WeekKey,
    article_id,
    assign_week,
    atomic_write_text,
    deduplicate,
    month_cache_path,
    stratified_sample,
    write_price_csv,
)

PLANTED_MODEL = "llm_a"
PLANTED_DIMENSION = "intensity"

_WORDS = ("crude", "supply", "OPEC", "inventory", "refinery", "demand", "pipeline", "output",
          "Brent", "shale", "sanctions", "storage", "exports", "rig", "outlook", "freight")


@dataclass
class SyntheticCorpus:
    articles: list[Article]
    vendor_scores: dict[str, float]
    bars: list[PriceBar]
    planted_means: dict[WeekKey, float]
    signal: dict[WeekKey, int]


def _title(rng: np.random.Generator, k: int) -> str:
    words = rng.choice(_WORDS, size=5, replace=True)
    return f"{' '.join(words).capitalize()} report {k}"


def generate(seed: int, n_weeks: int = 320, start: dt.date = dt.date(2020, 1, 6),
             mean_articles: float = 14.0, sample_fraction: float = 0.5,
             follow_prob: float = 0.75, stub_seed: int | None = None) -> SyntheticCorpus:
    stub_seed = seed if stub_seed is None else stub_seed
    rng = np.random.default_rng([seed, 20200106])
    monday = start - dt.timedelta(days=start.weekday())
    weeks = [WeekKey.from_date(monday + dt.timedelta(weeks=i)) for i in range(n_weeks)]

    articles = []
    k = 0
    for i, wk in enumerate(weeks):
        n = 3 + int(rng.poisson(mean_articles))
        offsets = np.sort(rng.integers(0, 7 * 86400, size=n))
        for off in offsets:
            ts = dt.datetime.combine(wk.monday(), dt.time(0), tzinfo=dt.timezone.utc)
            ts += dt.timedelta(seconds=int(off))
            title = _title(rng, k)
            body = " ".join(rng.choice(_WORDS, size=int(rng.integers(20, 80))))
            articles.append(Article(article_id("synthetic-wire", ts, title), "synthetic-wire", ts,
                                    title, body, ("energy_transportation",)))
            k += 1
            if rng.random() < 0.03:  # near-duplicate re-post later the same day
                later = min(ts + dt.timedelta(minutes=30),
                            ts.replace(hour=23, minute=59, second=59))
                articles.append(Article(article_id("mirror-wire", later, title.upper()),
                                        "mirror-wire", later, title.upper(), body + " (update)",
                                        ("energy_transportation",)))
    vendor_scores = {a.id: stub_vector(a.id, "vendor", stub_seed).polarity for a in articles}

    sample = stratified_sample(deduplicate(articles), sample_fraction, seed)
    planted: dict[WeekKey, float] = {}
    by_week: dict[WeekKey, list[Article]] = {}
    for a in sample:
        by_week.setdefault(assign_week(a), []).append(a)
    for wk in weeks:
        num = den = 0.0
        for a in by_week.get(wk, []):
            v = stub_vector(a.id, PLANTED_MODEL, stub_seed)
            x = getattr(v, PLANTED_DIMENSION)
            if x is None:
                continue
            num += v.relevance * x
            den += v.relevance
        if den > 0:
            planted[wk] = num / den
    cut = float(np.median(list(planted.values())))
    signal = {wk: (1 if planted.get(wk, cut) > cut else -1) for wk in weeks}

    returns = [0.0]
    for i in range(1, n_weeks):
        s = signal[weeks[i - 1]]
        if rng.random() >= follow_prob:
            s = -s
        returns.append(s * (abs(rng.normal(0.0, 0.05)) + 1e-3))

    bars = []
    close = 60.0
    for i, wk in enumerate(weeks):
        target = close * float(np.exp(returns[i])) if i else close
        n_days = 4 if rng.random() < 0.05 else 5  # occasional Friday holiday
        path = np.cumsum(rng.normal(0.0, 0.01, size=n_days))
        path += np.linspace(0.0, np.log(target / close) - path[-1], n_days)
        for d in range(n_days):
            price = target if d == n_days - 1 else close * float(np.exp(path[d]))
            bars.append(PriceBar(wk.monday() + dt.timedelta(days=d), round(price, 6)))
        close = bars[-1].close
    return SyntheticCorpus(articles, vendor_scores, bars, planted, signal)


def feed_item(article: Article, vendor_score: float) -> dict:
    return {
        "title": article.title,
        "source": article.source,
        "summary": article.body,
        "time_published": article.published_at.strftime("%Y%m%dT%H%M%S"),
        "topics": [{"topic": "Energy & Transportation", "relevance_score": "1.0"}],
        "overall_sentiment_score": vendor_score,
    }


def write_raw_pages(corpus: SyntheticCorpus, raw_dir: Path, page_size: int = 1000) -> list[Path]:
    """Write the corpus as cached monthly feed responses (lists of pages)."""
    months: dict[tuple[int, int], list[Article]] = {}
    for a in corpus.articles:
        months.setdefault((a.published_at.year, a.published_at.month), []).append(a)
    paths = []
    for (year, month), arts in sorted(months.items()):
        items = [feed_item(a, corpus.vendor_scores[a.id]) for a in arts]
        pages = []
        for start in range(0, len(items), page_size):
            page = {"feed": items[start:start + page_size]}
            if start + page_size < len(items):
                page["next"] = str(start + page_size)
            pages.append(page)
        path = month_cache_path(raw_dir, year, month)
        atomic_write_text(path, json.dumps(pages, sort_keys=True))
        paths.append(path)
    return paths


def write_prices(corpus: SyntheticCorpus, path: Path) -> None:
    write_price_csv(path, corpus.bars)


def corpus_window(corpus: SyntheticCorpus) -> tuple[dt.date, dt.date]:
    first = min(a.published_at for a in corpus.articles).date()
    last = max(a.published_at for a in corpus.articles).date()
    return first.replace(day=1), last
