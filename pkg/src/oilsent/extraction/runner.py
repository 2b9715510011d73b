"""Corpus-level extraction with retries, a content-addressed cache and failure accounting."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from ..ingestion import Article, atomic_write_text
from .adapters import Adapter, AdapterError
from .scores import ScoreValidationError, SentimentVector, check_population

logger = logging.getLogger(__name__)


@dataclass
class ExtractionConfig:
    cache_dir: Path | None = None
    max_retries: int = 2
    backoff: float = 0.0
    max_in_flight: int = 4


@dataclass
class ExtractionResult:
    vectors: list[SentimentVector]
    failures: list[dict]
    adapter_calls: int = 0
    cache_hits: int = 0
    warnings: Counter = field(default_factory=Counter)


def _cache_path(cache_dir: Path, article_id: str, adapter: Adapter) -> Path:
    key = f"{article_id}|{adapter.model_id}|{adapter.cache_tag}"
    digest = hashlib.sha256(key.encode("utf-8")).hexdigest()
    return Path(cache_dir) / adapter.model_id / digest[:2] / f"{digest}.json"


def _score_with_retries(adapter: Adapter, article: Article, cfg: ExtractionConfig):
    calls = 0
    for attempt in range(cfg.max_retries + 1):
        calls += 1
        try:
            vec = adapter.score(article)
            check_population(vec)
            return vec, None, calls
        except AdapterError as exc:
            if attempt == cfg.max_retries:
                return None, f"adapter exhausted: {exc}", calls
            logger.debug("retrying %s on %s: %s", adapter.model_id, article.id, exc)
            if cfg.backoff:
                time.sleep(cfg.backoff * 2 ** attempt)
        except (ScoreValidationError, ValueError) as exc:
            return None, f"validation: {exc}", calls
    raise AssertionError("unreachable")


def extract_corpus(articles: Sequence[Article], adapter: Adapter,
                   cfg: ExtractionConfig | None = None) -> ExtractionResult:
    """Score every article once; each yields a vector or a recorded failure, in input order."""
    cfg = cfg or ExtractionConfig()
    slots: list[SentimentVector | None] = [None] * len(articles)
    todo = []
    hits = 0
    for i, art in enumerate(articles):
        if cfg.cache_dir is not None:
            path = _cache_path(cfg.cache_dir, art.id, adapter)
            if path.exists():
                slots[i] = SentimentVector.from_json(json.loads(path.read_text(encoding="utf-8")))
                hits += 1
                continue
        todo.append(i)

    with ThreadPoolExecutor(max_workers=max(1, cfg.max_in_flight)) as pool:
        outcomes = list(pool.map(lambda i: _score_with_retries(adapter, articles[i], cfg), todo))

    failures = []
    calls = 0
    for i, (vec, err, n) in zip(todo, outcomes):
        calls += n
        art = articles[i]
        if vec is None:
            failures.append({"article_id": art.id, "model_id": adapter.model_id, "error": err})
            continue
        slots[i] = vec
        if cfg.cache_dir is not None:
            atomic_write_text(_cache_path(cfg.cache_dir, art.id, adapter),
                              json.dumps(vec.to_json(), sort_keys=True))

    warnings = Counter(getattr(adapter, "warnings", Counter()))
    if failures:
        logger.warning("%s: %d of %d articles failed", adapter.model_id, len(failures),
                       len(articles))
    return ExtractionResult([v for v in slots if v is not None], failures, calls, hits, warnings)


def write_vector_store(path: Path, vectors: Iterable[SentimentVector]) -> None:
    text = "".join(json.dumps(v.to_json()) + "\n" for v in vectors)
    atomic_write_text(path, text)


def read_vector_store(path: Path) -> list[SentimentVector]:
    with open(path, encoding="utf-8") as fh:
        return [SentimentVector.from_json(json.loads(line)) for line in fh if line.strip()]


def write_failures(path: Path, failures: Iterable[dict]) -> None:
    atomic_write_text(path, "".join(json.dumps(f, sort_keys=True) + "\n" for f in failures))
