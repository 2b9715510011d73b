"""News corpus acquisition and the weekly price, return and label series."""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import math
import os
import re
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import httpx
import numpy as np

logger = logging.getLogger(__name__)

MAX_PAGE_SIZE = 1000
DEFAULT_TOPIC = "energy_transportation"
API_KEY_ENV = "OILSENT_NEWS_API_KEY"
BASE_URL_ENV = "OILSENT_NEWS_BASE_URL"

_UMASK = os.umask(0)
os.umask(_UMASK)


class IngestionError(Exception):
    pass


class FetchError(IngestionError):
    def __init__(self, month_key: str, message: str):
        super().__init__(f"{month_key}: {message}")
        self.month_key = month_key


class ParseError(IngestionError):
    def __init__(self, month_key: str, message: str):
        super().__init__(f"{month_key}: {message}")
        self.month_key = month_key


@dataclass(frozen=True, order=True)
class WeekKey:
    iso_year: int
    iso_week: int

    @classmethod
    def from_date(cls, day: dt.date) -> "WeekKey":
        iso = day.isocalendar()
        return cls(iso[0], iso[1])

    @classmethod
    def parse(cls, text: str) -> "WeekKey":
        m = re.fullmatch(r"(\d{4})-W(\d{2})", text.strip())
        if not m:
            raise ValueError(f"bad week key {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))

    def monday(self) -> dt.date:
        return dt.date.fromisocalendar(self.iso_year, self.iso_week, 1)

    def end(self) -> dt.datetime:
        """Last instant (UTC) belonging to this week."""
        sunday = dt.date.fromisocalendar(self.iso_year, self.iso_week, 7)
        return dt.datetime.combine(sunday, dt.time(23, 59, 59), tzinfo=dt.timezone.utc)

    def next(self) -> "WeekKey":
        return WeekKey.from_date(self.monday() + dt.timedelta(days=7))

    def __str__(self) -> str:
        return f"{self.iso_year:04d}-W{self.iso_week:02d}"


def week_range(first: WeekKey, last: WeekKey) -> list[WeekKey]:
    out = []
    wk = first
    while wk <= last:
        out.append(wk)
        wk = wk.next()
    return out


@dataclass(frozen=True)
class Article:
    id: str
    source: str
    published_at: dt.datetime
    title: str
    body: str
    topic_tags: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "source": self.source,
            "published_at": format_timestamp(self.published_at),
            "title": self.title,
            "body": self.body,
            "topic_tags": list(self.topic_tags),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Article":
        return cls(
            id=obj["id"],
            source=obj["source"],
            published_at=parse_timestamp(obj["published_at"]),
            title=obj["title"],
            body=obj["body"],
            topic_tags=tuple(obj.get("topic_tags", ())),
        )


@dataclass(frozen=True)
class PriceBar:
    trade_date: dt.date
    close: float


def format_timestamp(ts: dt.datetime) -> str:
    return ts.astimezone(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> dt.datetime:
    # RFC 3339 (store format) or the compact feed format 20200131T153000
    if re.fullmatch(r"\d{8}T\d{4}(\d{2})?", text):
        fmt = "%Y%m%dT%H%M%S" if len(text) == 15 else "%Y%m%dT%H%M"
        return dt.datetime.strptime(text, fmt).replace(tzinfo=dt.timezone.utc)
    ts = dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=dt.timezone.utc)
    return ts.astimezone(dt.timezone.utc).replace(microsecond=0)


def assign_week(article: Article) -> WeekKey:
    return WeekKey.from_date(article.published_at.astimezone(dt.timezone.utc).date())


def normalize_tag(tag: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", tag.lower()).strip("_")


def article_id(source: str, published_at: dt.datetime, title: str) -> str:
    key = f"{source}\x1f{format_timestamp(published_at)}\x1f{title}"
    return hashlib.sha1(key.encode("utf-8")).hexdigest()[:16]


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o666 & ~_UMASK)  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# News feed client
# --------------------------------------------------------------------------


@dataclass
class NewsClientConfig:
    base_url: str = "https://www.alphavantage.co/query"
    api_key: str | None = None
    topic: str = DEFAULT_TOPIC
    page_size: int = MAX_PAGE_SIZE
    cache_dir: Path = Path("corpus/raw")
    corpus_start: dt.date = dt.date(2020, 1, 1)
    corpus_end: dt.date = dt.date(2025, 12, 31)
    max_retries: int = 3
    backoff: float = 0.5
    timeout: float = 30.0
    lenient: bool = False
    transport: httpx.BaseTransport | None = field(default=None, repr=False)

    @classmethod
    def from_env(cls, **overrides) -> "NewsClientConfig":
        cfg = cls(**overrides)
        if cfg.api_key is None:
            cfg.api_key = os.environ.get(API_KEY_ENV)
        if BASE_URL_ENV in os.environ and "base_url" not in overrides:
            cfg.base_url = os.environ[BASE_URL_ENV]
        return cfg


def _month_window(year: int, month: int) -> tuple[dt.datetime, dt.datetime]:
    start = dt.datetime(year, month, 1, tzinfo=dt.timezone.utc)
    if month == 12:
        nxt = dt.datetime(year + 1, 1, 1, tzinfo=dt.timezone.utc)
    else:
        nxt = dt.datetime(year, month + 1, 1, tzinfo=dt.timezone.utc)
    return start, nxt - dt.timedelta(seconds=1)


def _get_with_retries(client: httpx.Client, url: str, params: dict, cfg: NewsClientConfig,
                      month_key: str) -> dict:
    last_exc: Exception | None = None
    for attempt in range(cfg.max_retries + 1):
        try:
            resp = client.get(url, params=params)
            if resp.status_code == 429 or resp.status_code >= 500:
                raise httpx.HTTPStatusError(
                    f"status {resp.status_code}", request=resp.request, response=resp)
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            last_exc = exc
            logger.warning("fetch %s attempt %d failed: %s", month_key, attempt + 1, exc)
            if attempt < cfg.max_retries:
                time.sleep(cfg.backoff * 2 ** attempt)
            continue
        try:
            return resp.json()
        except ValueError as exc:
            raise ParseError(month_key, f"response is not JSON: {exc}") from exc
    raise FetchError(month_key, f"gave up after {cfg.max_retries + 1} attempts: {last_exc}")


def _parse_feed_item(item: dict, month_key: str) -> tuple[Article, float | None]:
    try:
        published = parse_timestamp(str(item["time_published"]))
        title = str(item["title"])
        source = str(item.get("source", ""))
        body = str(item.get("summary", item.get("body", "")) or "")
        tags = []
        for t in item.get("topics", []) or []:
            tags.append(normalize_tag(t["topic"] if isinstance(t, dict) else str(t)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(month_key, f"malformed feed item: {exc}") from exc
    score = item.get("overall_sentiment_score")
    art = Article(
        id=article_id(source, published, title),
        source=source,
        published_at=published,
        title=title,
        body=body,
        topic_tags=tuple(sorted(set(tags))),
    )
    return art, (float(score) if score is not None else None)


def parse_month_pages(pages: list[dict], month_key: str, topic: str,
                      window: tuple[dt.datetime, dt.datetime]) -> list[Article]:
    """Turn cached raw pages into tag-filtered articles inside the month window."""
    out = []
    for page in pages:
        if not isinstance(page, dict) or not isinstance(page.get("feed"), list):
            raise ParseError(month_key, "payload has no 'feed' list")
        for item in page["feed"]:
            art, _ = _parse_feed_item(item, month_key)
            if topic not in art.topic_tags:
                continue
            if not window[0] <= art.published_at <= window[1]:
                continue
            out.append(art)
    out.sort(key=lambda a: (a.published_at, a.id))
    return out


def vendor_scores_from_pages(pages: list[dict]) -> dict[str, float]:
    """Article id -> the feed's own overall sentiment score."""
    scores = {}
    for page in pages:
        for item in page.get("feed", []):
            try:
                art, score = _parse_feed_item(item, "")
            except ParseError:
                continue
            if score is not None:
                scores[art.id] = score
    return scores


def month_cache_path(cache_dir: Path, year: int, month: int) -> Path:
    return Path(cache_dir) / f"{year:04d}-{month:02d}.json"


def fetch_news_month(cfg: NewsClientConfig, year: int, month: int) -> list[Article]:
    month_key = f"{year:04d}-{month:02d}"
    start, end = _month_window(year, month)
    if end.date() < cfg.corpus_start or start.date() > cfg.corpus_end:
        raise IngestionError(f"{month_key} lies outside the corpus window")
    if not 1 <= cfg.page_size <= MAX_PAGE_SIZE:
        raise IngestionError(f"page_size must be in [1, {MAX_PAGE_SIZE}]")

    cache_path = month_cache_path(cfg.cache_dir, year, month)
    if cache_path.exists():
        pages = json.loads(cache_path.read_text(encoding="utf-8"))
    else:
        params = {
            "function": "NEWS_SENTIMENT",
            "topics": cfg.topic,
            "time_from": start.strftime("%Y%m%dT%H%M"),
            "time_to": end.strftime("%Y%m%dT%H%M"),
            "limit": cfg.page_size,
            "sort": "EARLIEST",
        }
        if cfg.api_key:
            params["apikey"] = cfg.api_key
        pages = []
        with httpx.Client(timeout=cfg.timeout, transport=cfg.transport) as client:
            while True:
                page = _get_with_retries(client, cfg.base_url, params, cfg, month_key)
                pages.append(page)
                cursor = page.get("next") if isinstance(page, dict) else None
                if not cursor:
                    break
                params = {**params, "cursor": cursor}
        atomic_write_text(cache_path, json.dumps(pages, sort_keys=True))

    lo = max(start, dt.datetime.combine(cfg.corpus_start, dt.time(0), tzinfo=dt.timezone.utc))
    hi = min(end, dt.datetime.combine(cfg.corpus_end, dt.time(23, 59, 59), tzinfo=dt.timezone.utc))
    try:
        return parse_month_pages(pages, month_key, cfg.topic, (lo, hi))
    except ParseError:
        if cfg.lenient:
            logger.warning("skipping malformed month %s", month_key)
            return []
        raise


def iter_months(start: dt.date, end: dt.date) -> Iterable[tuple[int, int]]:
    y, m = start.year, start.month
    while (y, m) <= (end.year, end.month):
        yield y, m
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)


def fetch_corpus(cfg: NewsClientConfig, max_in_flight: int = 4) -> list[Article]:
    from concurrent.futures import ThreadPoolExecutor

    months = list(iter_months(cfg.corpus_start, cfg.corpus_end))
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        results = list(pool.map(lambda ym: fetch_news_month(cfg, *ym), months))
    return [a for chunk in results for a in chunk]


# --------------------------------------------------------------------------
# Corpus transforms
# --------------------------------------------------------------------------


def _title_key(title: str) -> str:
    return " ".join(title.lower().split())


def deduplicate(articles: Sequence[Article]) -> list[Article]:
    ordered = sorted(articles, key=lambda a: a.published_at)  # stable
    seen = set()
    out = []
    for art in ordered:
        key = (_title_key(art.title), art.published_at.date())
        if key in seen:
            continue
        seen.add(key)
        out.append(art)
    return out


def stratified_sample(articles: Sequence[Article], fraction: float, seed: int) -> list[Article]:
    """Sample each calendar month independently, ``round-half-up(fraction * n)`` per month."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    strata: dict[tuple[int, int], list[Article]] = {}
    for art in articles:
        strata.setdefault((art.published_at.year, art.published_at.month), []).append(art)

    picked = []
    for (year, month), members in sorted(strata.items()):
        # canonical order makes the draw independent of input permutation
        members = sorted(members, key=lambda a: (a.published_at, a.id))
        k = math.floor(fraction * len(members) + 0.5)
        rng = np.random.default_rng([seed, year, month])
        idx = rng.choice(len(members), size=k, replace=False)
        picked.extend(members[i] for i in sorted(idx))
    picked.sort(key=lambda a: (a.published_at, a.id))
    return picked


def write_article_store(path: Path, articles: Iterable[Article]) -> None:
    lines = [json.dumps(a.to_json(), ensure_ascii=False) for a in articles]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_article_store(path: Path) -> list[Article]:
    with open(path, encoding="utf-8") as fh:
        return [Article.from_json(json.loads(line)) for line in fh if line.strip()]


# --------------------------------------------------------------------------
# Prices, returns, labels
# --------------------------------------------------------------------------


def read_price_csv(path: Path) -> list[PriceBar]:
    bars = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["date", "close"]:
            raise IngestionError(f"{path}: expected header 'date,close'")
        for row in reader:
            bars.append(PriceBar(dt.date.fromisoformat(row["date"].strip()), float(row["close"])))
    return bars


def write_price_csv(path: Path, bars: Iterable[PriceBar]) -> None:
    lines = ["date,close\n"] + [f"{b.trade_date.isoformat()},{b.close!r}\n" for b in bars]
    atomic_write_text(path, "".join(lines))


def weekly_close_series(bars: Sequence[PriceBar]) -> list[tuple[WeekKey, float]]:
    if not bars:
        raise ValueError("no price bars")
    out: list[tuple[WeekKey, float]] = []
    prev = None
    for bar in bars:
        if prev is not None and bar.trade_date <= prev:
            raise ValueError("trade dates must be strictly increasing")
        prev = bar.trade_date
        wk = WeekKey.from_date(bar.trade_date)
        if out and out[-1][0] == wk:
            out[-1] = (wk, bar.close)
        else:
            out.append((wk, bar.close))
    return out


def weekly_log_returns(weekly_closes: Sequence[tuple[WeekKey, float]]) -> list[tuple[WeekKey, float]]:
    if len(weekly_closes) < 2:
        raise ValueError("need at least two weekly closes")
    closes = np.array([c for _, c in weekly_closes], dtype=float)
    if np.any(~(closes > 0)):
        raise ValueError("closes must be strictly positive")
    rets = np.log(closes[1:] / closes[:-1])
    return [(wk, float(r)) for (wk, _), r in zip(weekly_closes[1:], rets)]


def make_labels(returns: Sequence[tuple[WeekKey, float]]) -> list[tuple[WeekKey, int]]:
    """Label week t with 1 when the following week's return is strictly positive."""
    if not returns:
        raise ValueError("empty return series")
    return [(returns[i][0], int(returns[i + 1][1] > 0)) for i in range(len(returns) - 1)]
