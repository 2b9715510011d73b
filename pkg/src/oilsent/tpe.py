"""Tree-structured Parzen Estimator for maximising a scalar objective.

Each parameter is modelled independently. Trials are split into a good set (the
best ``ceil(gamma * n)``) and a bad set; both become mixtures of truncated normals
plus a wide prior component, and the candidate with the largest good/bad density
ratio is proposed.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

KINDS = ("uniform", "log_uniform", "integer_uniform")


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str
    low: float
    high: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        if not self.low < self.high:
            raise ValueError(f"{self.name}: low must be < high")
        if self.kind == "log_uniform" and self.low <= 0:
            raise ValueError(f"{self.name}: log_uniform needs low > 0")

    @property
    def bounds(self) -> tuple[float, float]:
        """Bounds in the internal (search) coordinate."""
        if self.kind == "log_uniform":
            return math.log(self.low), math.log(self.high)
        if self.kind == "integer_uniform":
            return self.low - 0.5, self.high + 0.5
        return float(self.low), float(self.high)

    def to_internal(self, value: float) -> float:
        return math.log(value) if self.kind == "log_uniform" else float(value)

    def from_internal(self, z: float):
        if self.kind == "log_uniform":
            return min(self.high, max(self.low, math.exp(z)))
        if self.kind == "integer_uniform":
            return int(min(self.high, max(self.low, math.floor(z + 0.5))))
        return min(self.high, max(self.low, float(z)))


SearchSpace = Sequence[ParamSpec]


@dataclass(frozen=True)
class TPEConfig:
    gamma: float = 0.25
    n_startup: int = 10
    n_candidates: int = 24
    bandwidth_floor: float = 0.01

    def __post_init__(self):
        if self.n_startup < 1 or self.n_candidates < 1 or not 0 < self.gamma < 1:
            raise ValueError("need n_startup >= 1, n_candidates >= 1, 0 < gamma < 1")


@dataclass
class Trial:
    params: dict
    objective: float
    trial_index: int
    wall_time: float | None = field(default=None, compare=False)


def learner_space() -> list[ParamSpec]:
    """Default search space over the boosted-tree training settings."""
    return [
        ParamSpec("num_trees", "integer_uniform", 50, 500),
        ParamSpec("learning_rate", "log_uniform", 0.01, 0.3),
        ParamSpec("max_depth", "integer_uniform", 2, 6),
        ParamSpec("min_samples_leaf", "integer_uniform", 5, 50),
        ParamSpec("l2_lambda", "log_uniform", 1e-3, 10.0),
        ParamSpec("feature_fraction", "uniform", 0.5, 1.0),
    ]


class ParzenMixture:
    """1-D mixture of truncated normals on [lo, hi] with one extra wide prior component."""

    def __init__(self, centers: Sequence[float], lo: float, hi: float, floor: float):
        self.lo, self.hi = lo, hi
        width = hi - lo
        mus = np.sort(np.asarray(centers, dtype=float))
        if mus.size:
            padded = np.concatenate([[lo], mus, [hi]])
            gaps = np.diff(padded)
            sig = np.maximum(gaps[:-1], gaps[1:])
            sig = np.clip(sig, floor * width, width)
        else:
            sig = np.empty(0)
        self.mu = np.concatenate([mus, [0.5 * (lo + hi)]])
        self.sigma = np.concatenate([sig, [width]])
        self.weights = np.full(self.mu.size, 1.0 / self.mu.size)
        a = (lo - self.mu) / self.sigma
        b = (hi - self.mu) / self.sigma
        self._mass = _norm_cdf(b) - _norm_cdf(a)

    def pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)[:, None]
        z = (x - self.mu) / self.sigma
        comp = np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * self.sigma * self._mass)
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, comp, 0.0) @ self.weights

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.choice(self.mu.size, size=size, p=self.weights)
        out = np.empty(size)
        for k, i in enumerate(idx):
            while True:
                v = rng.normal(self.mu[i], self.sigma[i])
                if self.lo <= v <= self.hi:
                    out[k] = v
                    break
        return out


def _norm_cdf(z: np.ndarray) -> np.ndarray:
    erf = np.vectorize(math.erf, otypes=[float])
    return 0.5 * (1.0 + erf(np.asarray(z, dtype=float) / math.sqrt(2.0)))


def _uniform_draw(space: SearchSpace, rng: np.random.Generator) -> dict:
    out = {}
    for p in space:
        lo, hi = p.bounds
        out[p.name] = p.from_internal(rng.uniform(lo, hi))
    return out


def split_history(history: Sequence[Trial], gamma: float) -> tuple[list[Trial], list[Trial]]:
    ranked = sorted(history, key=lambda t: (-t.objective, t.trial_index))
    n_good = max(1, math.ceil(gamma * len(ranked)))
    return ranked[:n_good], ranked[n_good:]


def suggest(history: Sequence[Trial], space: SearchSpace, cfg: TPEConfig,
            rng: np.random.Generator) -> dict:
    if not space:
        raise ValueError("empty search space")
    if len(history) < cfg.n_startup:
        return _uniform_draw(space, rng)
    good, bad = split_history(history, cfg.gamma)
    score = np.zeros(cfg.n_candidates)
    cands = {}
    for p in space:
        lo, hi = p.bounds
        l_est = ParzenMixture([p.to_internal(t.params[p.name]) for t in good], lo, hi,
                              cfg.bandwidth_floor)
        g_est = ParzenMixture([p.to_internal(t.params[p.name]) for t in bad], lo, hi,
                              cfg.bandwidth_floor)
        xs = l_est.sample(rng, cfg.n_candidates)
        with np.errstate(divide="ignore"):
            score += np.log(l_est.pdf(xs)) - np.log(g_est.pdf(xs))
        cands[p.name] = xs
    best = int(np.argmax(score))
    return {p.name: p.from_internal(cands[p.name][best]) for p in space}


def optimize(objective_fn: Callable[[dict], float], space: SearchSpace, n_trials: int,
             cfg: TPEConfig | None = None, rng: np.random.Generator | None = None,
             log_path: Path | None = None, record_time: bool = True
             ) -> tuple[Trial, list[Trial]]:
    cfg = cfg or TPEConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    history: list[Trial] = []
    for i in range(n_trials):
        params = suggest(history, space, cfg, rng)
        t0 = time.perf_counter()
        value = float(objective_fn(dict(params)))
        elapsed = time.perf_counter() - t0
        if math.isnan(value):
            value = -math.inf
        history.append(Trial(params, value, i, elapsed if record_time else None))
    best = history[0]
    for t in history[1:]:
        if t.objective > best.objective:
            best = t
    if log_path is not None:
        write_study_log(log_path, history)
    return best, history


def study_log_text(history: Sequence[Trial]) -> str:
    lines = []
    for t in history:
        rec = {
            "index": t.trial_index,
            "params": t.params,
            "objective": t.objective if math.isfinite(t.objective) else None,
            "wall_time": t.wall_time,
        }
        lines.append(json.dumps(rec, sort_keys=True))
    return "".join(line + "\n" for line in lines)


def write_study_log(path: Path, history: Sequence[Trial]) -> None:
    from .ingestion import atomic_write_text

    atomic_write_text(Path(path), study_log_text(history))


def read_study_log(path: Path) -> list[Trial]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            obj = rec["objective"]
            out.append(Trial(rec["params"], -math.inf if obj is None else obj, rec["index"],
                             rec.get("wall_time")))
    return out


def params_in_space(params: Mapping[str, float], space: SearchSpace) -> bool:
    for p in space:
        v = params[p.name]
        if not p.low <= v <= p.high:
            return False
        if p.kind == "integer_uniform" and not isinstance(v, int):
            return False
    return True
