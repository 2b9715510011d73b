"""Independent reference implementations used by the tests.

Written in plain Python with no shared code paths, so a bug in the package cannot
cancel out against the same bug here.
"""

import datetime as dt
import math
import random

import mpmath

from oilsent.extraction import SentimentVector

# Feature names in the order of the reference feature table, frozen.
APPENDIX_FEATURES = [
    "gpt_article_count", "gpt_relevance_mean", "gpt_polarity_mean", "gpt_intensity_mean",
    "gpt_uncertainty_mean", "gpt_forwardness_mean", "gpt_polarity_std", "gpt_uncertainty_std",
    "gpt_polarity_momentum", "gpt_uncertainty_momentum", "gpt_forwardness_momentum",
    "llama_article_count", "llama_relevance_mean", "llama_polarity_mean", "llama_intensity_mean",
    "llama_uncertainty_mean", "llama_forwardness_mean", "llama_polarity_std",
    "llama_uncertainty_std", "llama_polarity_momentum", "llama_uncertainty_momentum",
    "llama_forwardness_momentum",
    "finbert_article_count", "finbert_polarity_mean", "finbert_polarity_std",
    "finbert_intensity_mean", "finbert_polarity_momentum",
    "av_article_count", "av_polarity_mean", "av_polarity_std", "av_polarity_momentum",
]


def log_returns_mp(closes, dps=50):
    with mpmath.workdps(dps):
        return [float(mpmath.log(mpmath.mpf(b) / mpmath.mpf(a)))
                for a, b in zip(closes[:-1], closes[1:])]


def auroc_pairs(labels, scores):
    pos = [s for y, s in zip(labels, scores) if y == 1]
    neg = [s for y, s in zip(labels, scores) if y == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def spearman_closed_form(a, b):
    """1 - 6 sum d^2 / (n (n^2 - 1)); valid only without ties."""
    n = len(a)
    ra = {v: i + 1 for i, v in enumerate(sorted(a))}
    rb = {v: i + 1 for i, v in enumerate(sorted(b))}
    d2 = sum((ra[x] - rb[y]) ** 2 for x, y in zip(a, b))
    return 1 - 6 * d2 / (n * (n * n - 1))


def weighted_mean(values, weights):
    num = den = 0.0
    for v, w in zip(values, weights):
        if v is None or w is None:
            continue
        num += w * v
        den += w
    return None if den == 0 else num / den


def sample_std(values):
    xs = [v for v in values if v is not None]
    if not xs:
        return None
    if len(xs) == 1:
        return 0.0
    m = sum(xs) / len(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def aggregate_brute(vectors, chat):
    """Dict of weekly statistics for one model's vectors in one week."""
    if not vectors:
        return None
    weights = [v.relevance for v in vectors] if chat else [1.0] * len(vectors)
    out = {"article_count": len(vectors)}
    for d in ("polarity", "intensity", "uncertainty", "forwardness"):
        out[f"{d}_mean"] = weighted_mean([getattr(v, d) for v in vectors], weights)
    rel = [v.relevance for v in vectors if v.relevance is not None]
    out["relevance_mean"] = (sum(rel) / len(rel)) if rel and chat else None
    out["polarity_std"] = sample_std([v.polarity for v in vectors])
    out["uncertainty_std"] = sample_std([v.uncertainty for v in vectors])
    return out


def momentum_brute(weekly):
    """Differences of consecutive non-empty weeks; ``weekly`` is a list of dicts or None."""
    out = []
    prev = None
    for cur in weekly:
        if cur is None:
            out.append(None)
            continue
        row = {}
        for d in ("polarity", "uncertainty", "forwardness"):
            a = cur[f"{d}_mean"]
            b = prev[f"{d}_mean"] if prev is not None else None
            row[d] = None if a is None or b is None else a - b
        out.append(row)
        prev = cur
    return out


def random_chat_vector(rng: random.Random, aid, model="llm_a"):
    rel = round(rng.random(), rng.choice([2, 6]))
    if rel < 0.1:
        return SentimentVector(aid, model, relevance=rel)
    return SentimentVector(aid, model, rel, rng.uniform(-1, 1), rng.random(), rng.random(),
                           rng.random())


def random_vector(rng: random.Random, aid, model):
    if model in ("llm_a", "llm_b"):
        return random_chat_vector(rng, aid, model)
    if model == "classifier":
        return SentimentVector(aid, model, polarity=rng.uniform(-1, 1), intensity=rng.random())
    return SentimentVector(aid, model, polarity=rng.uniform(-1, 1))


def utc(*args):
    return dt.datetime(*args, tzinfo=dt.timezone.utc)
