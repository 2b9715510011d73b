"""Per-article sentiment vectors, chat prompt construction and reply validation."""

from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from typing import Optional

from ..ingestion import Article

DIMENSIONS = ("relevance", "polarity", "intensity", "uncertainty", "forwardness")
RANGES = {
    "relevance": (0.0, 1.0),
    "polarity": (-1.0, 1.0),
    "intensity": (0.0, 1.0),
    "uncertainty": (0.0, 1.0),
    "forwardness": (0.0, 1.0),
}
RELEVANCE_FLOOR = 0.1

MODEL_IDS = ("llm_a", "llm_b", "classifier", "vendor")
CHAT_MODELS = ("llm_a", "llm_b")
# which dimensions each model family populates
POPULATED = {
    "llm_a": DIMENSIONS,
    "llm_b": DIMENSIONS,
    "classifier": ("polarity", "intensity"),
    "vendor": ("polarity",),
}

DEFAULT_CHAR_BUDGET = 8000
JSON_REMINDER = "Return only the JSON object."


def system_prompt() -> str:
    return resources.files("oilsent.extraction").joinpath("system_prompt.txt").read_text(
        encoding="utf-8")


SYSTEM_PROMPT = system_prompt()


class ScoreValidationError(ValueError):
    def __init__(self, article_id: str, reason: str):
        super().__init__(f"article {article_id}: {reason}")
        self.article_id = article_id
        self.reason = reason


@dataclass(frozen=True)
class SentimentVector:
    article_id: str
    model_id: str
    relevance: Optional[float] = None
    polarity: Optional[float] = None
    intensity: Optional[float] = None
    uncertainty: Optional[float] = None
    forwardness: Optional[float] = None

    def get(self, dim: str) -> Optional[float]:
        return getattr(self, dim)

    def to_json(self) -> dict:
        out = {"article_id": self.article_id, "model_id": self.model_id}
        out.update({d: getattr(self, d) for d in DIMENSIONS})
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "SentimentVector":
        return cls(obj["article_id"], obj["model_id"], *(obj.get(d) for d in DIMENSIONS))


def check_population(vec: SentimentVector) -> None:
    """Raise if a vector violates its model's population pattern or the ranges."""
    if vec.model_id not in POPULATED:
        raise ScoreValidationError(vec.article_id, f"unknown model {vec.model_id!r}")
    allowed = POPULATED[vec.model_id]
    for d in DIMENSIONS:
        v = vec.get(d)
        if d not in allowed and v is not None:
            raise ScoreValidationError(vec.article_id, f"{vec.model_id} must not populate {d}")
        if v is not None:
            lo, hi = RANGES[d]
            if not lo <= v <= hi:
                raise ScoreValidationError(vec.article_id, f"{d}={v} outside [{lo}, {hi}]")
    if vec.model_id in CHAT_MODELS:
        if vec.relevance is None:
            raise ScoreValidationError(vec.article_id, "relevance missing")
        rest = [vec.get(d) for d in DIMENSIONS[1:]]
        if vec.relevance < RELEVANCE_FLOOR:
            if any(v is not None for v in rest):
                raise ScoreValidationError(vec.article_id, "low relevance with scores")
        elif any(v is None for v in rest):
            raise ScoreValidationError(vec.article_id, "null score with relevance >= 0.1")
    elif vec.model_id == "classifier":
        if vec.polarity is None or vec.intensity is None:
            raise ScoreValidationError(vec.article_id, "classifier vector incomplete")
    elif vec.polarity is None:
        raise ScoreValidationError(vec.article_id, "vendor vector without polarity")


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_content: str
    temperature: float = 0.0
    max_tokens: int = 200

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.system_prompt.encode("utf-8"))
        h.update(b"\x00")
        h.update(self.user_content.encode("utf-8"))
        return h.hexdigest()


def prompt_hash(char_budget: int, extra: str = "") -> str:
    """Cache-key component identifying the prompt template and truncation rule."""
    h = hashlib.sha256(SYSTEM_PROMPT.encode("utf-8"))
    h.update(f"|budget={char_budget}|{extra}".encode("utf-8"))
    return h.hexdigest()[:16]


def _truncate_at_whitespace(text: str, limit: int) -> str:
    if len(text) <= limit:
        return text
    if limit <= 0:
        return ""
    cut = text[:limit + 1]
    idx = max(cut.rfind(" "), cut.rfind("\n"), cut.rfind("\t"))
    if idx <= 0:
        return text[:limit]
    return text[:idx].rstrip()


def build_prompt(article: Article, char_budget: int = DEFAULT_CHAR_BUDGET) -> ChatRequest:
    title = article.title.strip()
    if char_budget < len(title) + 100:
        raise ValueError("char_budget must leave room for the title plus 100 characters")
    body = article.body.strip()
    if not body:
        return ChatRequest(SYSTEM_PROMPT, title)
    room = char_budget - len(title) - 2
    return ChatRequest(SYSTEM_PROMPT, title + "\n\n" + _truncate_at_whitespace(body, room))


_FENCE = re.compile(r"^\s*```[a-zA-Z]*\s*\n?(.*?)\n?\s*```\s*$", re.S)


def _extract_objects(text: str) -> list:
    decoder = json.JSONDecoder()
    objs = []
    i = 0
    while True:
        i = text.find("{", i)
        if i < 0:
            return objs
        try:
            obj, end = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            i += 1
            continue
        objs.append(obj)
        i = end


def _number(value, key: str, article_id: str) -> Optional[float]:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScoreValidationError(article_id, f"{key} is not a number")
    value = float(value)
    lo, hi = RANGES[key]
    if not math.isfinite(value) or not lo <= value <= hi:
        raise ScoreValidationError(article_id, f"{key}={value} outside [{lo}, {hi}]")
    return value


def parse_scores(raw_text: str, article_id: str, model_id: str,
                 warnings: Counter | None = None) -> SentimentVector:
    if model_id not in CHAT_MODELS:
        raise ValueError(f"{model_id} is not a chat model")
    m = _FENCE.match(raw_text)
    text = m.group(1) if m else raw_text
    objs = _extract_objects(text)
    if not objs:
        raise ScoreValidationError(article_id, "no JSON object in reply")
    if len(objs) > 1:
        raise ScoreValidationError(article_id, "multiple JSON objects in reply")
    obj = objs[0]
    if not isinstance(obj, dict):
        raise ScoreValidationError(article_id, "reply is not a JSON object")
    missing = [k for k in DIMENSIONS if k not in obj]
    if missing:
        raise ScoreValidationError(article_id, f"missing keys {missing}")
    vals = {k: _number(obj[k], k, article_id) for k in DIMENSIONS}
    if vals["relevance"] is None:
        raise ScoreValidationError(article_id, "relevance is null")
    rest = DIMENSIONS[1:]
    if vals["relevance"] < RELEVANCE_FLOOR:
        if any(vals[k] is not None for k in rest):
            if warnings is not None:
                warnings["low_relevance_coerced"] += 1
            for k in rest:
                vals[k] = None
    else:
        nulls = [k for k in rest if vals[k] is None]
        if nulls:
            raise ScoreValidationError(article_id, f"null {nulls} with relevance >= 0.1")
    return SentimentVector(article_id, model_id, **vals)


def serialize_scores(vec: SentimentVector) -> str:
    """Inverse of :func:`parse_scores` for valid chat-model vectors."""
    return json.dumps({d: vec.get(d) for d in DIMENSIONS})


def classifier_to_scores(p_positive: float, p_negative: float, p_neutral: float,
                         article_id: str) -> SentimentVector:
    probs = (p_positive, p_negative, p_neutral)
    if any(not math.isfinite(p) or p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-6:
        raise ValueError(f"article {article_id}: invalid class probabilities {probs}")
    polarity = min(1.0, max(-1.0, p_positive - p_negative))
    intensity = min(1.0, max(0.0, 1.0 - p_neutral))
    return SentimentVector(article_id, "classifier", polarity=polarity, intensity=intensity)


def vendor_passthrough(raw_score: float, article_id: str,
                       warnings: Counter | None = None) -> SentimentVector:
    raw_score = float(raw_score)
    if not math.isfinite(raw_score):
        raise ValueError(f"article {article_id}: non-finite vendor score")
    clamped = min(1.0, max(-1.0, raw_score))
    if clamped != raw_score and warnings is not None:
        warnings["vendor_clamped"] += 1
    return SentimentVector(article_id, "vendor", polarity=clamped)
