"""Run configuration, stored as ``config.json`` in every run directory."""

from __future__ import annotations

import copy
import datetime as dt
import json
from pathlib import Path

from ..features import FEATURE_SETS
from ..ingestion import atomic_write_text

CONFIG_NAME = "config.json"

DEFAULTS: dict = {
    "corpus_start": "2020-01-01",
    "corpus_end": "2025-12-31",
    "sample_fraction": 0.2,
    "seed": 0,
    "stub": False,
    "prices_csv": "prices.csv",
    "news": {
        "base_url": "https://www.alphavantage.co/query",
        "topic": "energy_transportation",
        "page_size": 1000,
        "lenient": False,
        "max_in_flight": 4,
    },
    "adapters": {
        "llm_a": {"base_url": "https://api.openai.com/v1", "model": "gpt-4o",
                  "api_key_env": "OPENAI_API_KEY"},
        "llm_b": {"base_url": "http://localhost:8000/v1", "model": "llama-3.2-3b-instruct",
                  "api_key_env": "LLAMA_API_KEY"},
        "classifier": {"base_url": "http://localhost:8080/predict", "api_key_env": "FINBERT_API_KEY"},
        "vendor": {},
    },
    "extraction": {
        "char_budget": 8000,
        "max_retries": 2,
        "max_in_flight": 4,
        "rate_per_second": 5.0,
    },
    "sets": list(FEATURE_SETS),
    "cv": {"k": 5, "min_train_fraction": 0.4, "inner_k": 3, "max_bins": 64},
    "tpe": {"n_trials": 50, "gamma": 0.25, "n_startup": 10, "n_candidates": 24},
    "explain": {"set": "gpt_finbert", "background_cap": 256},
    "record_timings": False,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve(override: dict | None = None) -> dict:
    cfg = _merge(DEFAULTS, override or {})
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    try:
        start = dt.date.fromisoformat(cfg["corpus_start"])
        end = dt.date.fromisoformat(cfg["corpus_end"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad corpus window: {exc}") from exc
    if start > end:
        raise ConfigError("corpus_start is after corpus_end")
    if not 0 < float(cfg["sample_fraction"]) <= 1:
        raise ConfigError("sample_fraction must lie in (0, 1]")
    unknown = [s for s in cfg["sets"] if s not in FEATURE_SETS]
    if unknown:
        raise ConfigError(f"unknown feature sets {unknown}")
    if cfg["explain"]["set"] not in cfg["sets"]:
        raise ConfigError("explain.set must be one of the evaluated sets")
    if not cfg["stub"]:
        missing = [m for m in ("llm_a", "llm_b", "classifier") if not cfg["adapters"].get(m)]
        if missing:
            raise ConfigError(f"adapters not configured: {missing}")


def load(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def save(run_dir: Path, cfg: dict) -> Path:
    path = Path(run_dir) / CONFIG_NAME
    atomic_write_text(path, json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return path
