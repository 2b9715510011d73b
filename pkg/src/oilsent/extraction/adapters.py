"""Sentiment model adapters: OpenAI-style chat, finance classifier, vendor passthrough, stubs."""

from __future__ import annotations

import hashlib
import logging
import threading
import time
from collections import Counter
from typing import Mapping

import httpx
import numpy as np

from ..ingestion import Article
from .scores import (
    CHAT_MODELS,
    DEFAULT_CHAR_BUDGET,
    JSON_REMINDER,
    RELEVANCE_FLOOR,
    ChatRequest,
    ScoreValidationError,
    SentimentVector,
    build_prompt,
    classifier_to_scores,
    parse_scores,
    prompt_hash,
    serialize_scores,
    vendor_passthrough,
)

logger = logging.getLogger(__name__)


class AdapterError(RuntimeError):
    """Transient adapter failure; the caller may retry."""


class TokenBucket:
    """Thread-safe token bucket; ``acquire`` blocks until a token is available."""

    def __init__(self, rate: float, capacity: float | None = None):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._stamp = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
                self._stamp = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            time.sleep(wait)


class Adapter:
    model_id: str
    cache_tag: str = "v1"

    def score(self, article: Article) -> SentimentVector:
        raise NotImplementedError


class ChatAdapter(Adapter):
    """Chat-completions client that prompts for the five sentiment dimensions."""

    def __init__(self, model_id: str, base_url: str, model_name: str, api_key: str | None = None,
                 char_budget: int = DEFAULT_CHAR_BUDGET, max_reparse: int = 2,
                 max_tokens: int = 200, timeout: float = 60.0,
                 rate_limiter: TokenBucket | None = None,
                 transport: httpx.BaseTransport | None = None):
        if model_id not in CHAT_MODELS:
            raise ValueError(f"{model_id} is not a chat model id")
        self.model_id = model_id
        self.base_url = base_url.rstrip("/")
        self.model_name = model_name
        self.api_key = api_key
        self.char_budget = char_budget
        self.max_reparse = max_reparse
        self.max_tokens = max_tokens
        self.rate_limiter = rate_limiter
        self.warnings: Counter = Counter()
        self.cache_tag = prompt_hash(char_budget, model_name)
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def complete(self, request: ChatRequest, article_id: str | None = None) -> str:
        if self.rate_limiter is not None:
            self.rate_limiter.acquire()
        body = {
            "model": self.model_name,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_content},
            ],
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self._client.post(f"{self.base_url}/chat/completions", json=body,
                                     headers=headers)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
            raise AdapterError(f"{self.model_id}: chat request failed: {exc}") from exc

    def score(self, article: Article) -> SentimentVector:
        request = build_prompt(article, self.char_budget)
        request = ChatRequest(request.system_prompt, request.user_content,
                              max_tokens=self.max_tokens)
        for attempt in range(self.max_reparse + 1):
            text = self.complete(request, article.id)
            try:
                return parse_scores(text, article.id, self.model_id, self.warnings)
            except ScoreValidationError:
                if attempt == self.max_reparse:
                    raise
                request = ChatRequest(request.system_prompt,
                                      request.user_content + "\n\n" + JSON_REMINDER,
                                      max_tokens=self.max_tokens)
        raise AssertionError("unreachable")


class ClassifierAdapter(Adapter):
    """Finance sentiment classifier behind an inference endpoint returning label scores."""

    model_id = "classifier"

    def __init__(self, base_url: str, api_key: str | None = None, char_budget: int = 2000,
                 timeout: float = 60.0, rate_limiter: TokenBucket | None = None,
                 transport: httpx.BaseTransport | None = None):
        self.base_url = base_url
        self.api_key = api_key
        self.char_budget = char_budget
        self.rate_limiter = rate_limiter
        self.cache_tag = f"clf-{char_budget}"
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def probabilities(self, article: Article) -> dict[str, float]:
        if self.rate_limiter is not None:
            self.rate_limiter.acquire()
        text = (article.title + "\n\n" + article.body).strip()[: self.char_budget]
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self._client.post(self.base_url, json={"inputs": text}, headers=headers)
            resp.raise_for_status()
            payload = resp.json()
            if payload and isinstance(payload[0], list):
                payload = payload[0]
            return {str(d["label"]).lower(): float(d["score"]) for d in payload}
        except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
            raise AdapterError(f"classifier request failed: {exc}") from exc

    def score(self, article: Article) -> SentimentVector:
        p = self.probabilities(article)
        try:
            return classifier_to_scores(p["positive"], p["negative"], p["neutral"], article.id)
        except (KeyError, ValueError) as exc:
            raise ScoreValidationError(article.id, f"bad classifier output: {exc}") from exc


class VendorAdapter(Adapter):
    """Passes through the news feed's own per-article sentiment score."""

    model_id = "vendor"
    cache_tag = "vendor"

    def __init__(self, scores: Mapping[str, float]):
        self.scores = dict(scores)
        self.warnings: Counter = Counter()

    def score(self, article: Article) -> SentimentVector:
        if article.id not in self.scores:
            raise ScoreValidationError(article.id, "no vendor score for article")
        return vendor_passthrough(self.scores[article.id], article.id, self.warnings)


# --------------------------------------------------------------------------
# Deterministic stand-ins
# --------------------------------------------------------------------------


def _rng_for(seed: int, model_id: str, article_id: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}|{model_id}|{article_id}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def stub_vector(article_id: str, model_id: str, seed: int = 0) -> SentimentVector:
    """Scores drawn from a generator seeded by a hash of (seed, model, article)."""
    rng = _rng_for(seed, model_id, article_id)
    if model_id in CHAT_MODELS:
        relevance = round(float(rng.uniform(0.0, 1.0)), 2)
        if relevance < RELEVANCE_FLOOR:
            return SentimentVector(article_id, model_id, relevance=relevance)
        pol, inten, unc, fwd = rng.uniform(size=4)
        return SentimentVector(
            article_id, model_id,
            relevance=relevance,
            polarity=round(float(2 * pol - 1), 2),
            intensity=round(float(inten), 2),
            uncertainty=round(float(unc), 2),
            forwardness=round(float(fwd), 2),
        )
    if model_id == "classifier":
        p = rng.dirichlet([0.6, 0.4, 0.5])
        return classifier_to_scores(float(p[0]), float(p[1]), 1.0 - float(p[0]) - float(p[1]),
                                    article_id)
    if model_id == "vendor":
        return vendor_passthrough(round(float(np.clip(rng.normal(0.15, 0.25), -1, 1)), 4),
                                  article_id)
    raise ValueError(f"unknown model {model_id!r}")


class StubChatAdapter(ChatAdapter):
    """Chat adapter whose replies come from :func:`stub_vector` instead of the network.

    ``fail_plan`` maps article id -> number of transient failures to raise first;
    ids in ``malformed`` always get an unparseable reply.
    """

    def __init__(self, model_id: str, seed: int = 0, fail_plan: Mapping[str, int] | None = None,
                 malformed: set[str] | None = None, char_budget: int = DEFAULT_CHAR_BUDGET):
        super().__init__(model_id, base_url="stub://", model_name=f"stub-{model_id}",
                         char_budget=char_budget, transport=httpx.MockTransport(_refuse))
        self.seed = seed
        self.cache_tag = prompt_hash(char_budget, f"stub-{model_id}-{seed}")
        self.fail_plan = dict(fail_plan or {})
        self.malformed = set(malformed or ())
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest, article_id: str | None = None) -> str:
        with self._lock:
            self.calls += 1
            remaining = self.fail_plan.get(article_id, 0)
            if remaining > 0:
                self.fail_plan[article_id] = remaining - 1
                raise AdapterError(f"stub transient failure for {article_id}")
        if article_id in self.malformed:
            return "I think this article is bullish."
        text = serialize_scores(stub_vector(article_id, self.model_id, self.seed))
        return f"```json\n{text}\n```"


class StubClassifierAdapter(Adapter):
    model_id = "classifier"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.cache_tag = f"stub-clf-{seed}"
        self.calls = 0

    def score(self, article: Article) -> SentimentVector:
        self.calls += 1
        return stub_vector(article.id, "classifier", self.seed)


class StubVendorAdapter(Adapter):
    model_id = "vendor"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.cache_tag = f"stub-vendor-{seed}"
        self.calls = 0

    def score(self, article: Article) -> SentimentVector:
        self.calls += 1
        return stub_vector(article.id, "vendor", self.seed)


def _refuse(request: httpx.Request) -> httpx.Response:
    return httpx.Response(503, json={"error": "stub adapter has no network"})


def stub_adapters(seed: int = 0) -> dict[str, Adapter]:
    return {
        "llm_a": StubChatAdapter("llm_a", seed),
        "llm_b": StubChatAdapter("llm_b", seed),
        "classifier": StubClassifierAdapter(seed),
        "vendor": StubVendorAdapter(seed),
    }
