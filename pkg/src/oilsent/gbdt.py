"""Histogram gradient-boosted trees for binary classification with logistic loss.

Trees grow level-wise to ``max_depth``. Each feature is cut into at most ``max_bins``
quantile bins whose edges are observed training values, and missing values get
their own bin and a learned routing direction per split.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

FORMAT = "oilsent-gbdt"
FORMAT_VERSION = 1
_MIN_GAIN = 1e-12
_MAX_BACKTRACK = 40


@dataclass(frozen=True)
class TrainConfig:
    num_trees: int = 100
    max_depth: int = 3
    min_samples_leaf: int = 5
    l2_lambda: float = 1.0
    learning_rate: float = 0.1
    feature_fraction: float = 1.0
    max_bins: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 0 or self.max_depth < 0 or self.min_samples_leaf < 1:
            raise ValueError("num_trees, max_depth must be >= 0 and min_samples_leaf >= 1")
        if self.l2_lambda < 0 or self.learning_rate <= 0:
            raise ValueError("l2_lambda must be >= 0 and learning_rate > 0")
        if not 0 < self.feature_fraction <= 1:
            raise ValueError("feature_fraction must lie in (0, 1]")
        if self.max_bins < 2:
            raise ValueError("max_bins must be >= 2")


@dataclass
class Tree:
    """Flat node arrays; ``feature[i] < 0`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, i: int) -> bool:
        return self.feature[i] < 0

    def used_features(self) -> list[int]:
        return sorted(set(int(f) for f in self.feature if f >= 0))

    def depth(self) -> int:
        def rec(i):
            return 0 if self.is_leaf(i) else 1 + max(rec(self.left[i]), rec(self.right[i]))
        return rec(0)

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                return node
            r = rows[active]
            n = node[active]
            x = X[r, feat[active]]
            go_left = np.where(np.isnan(x), self.missing_left[n], x <= self.threshold[n])
            node[active] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.leaf_index(X)]

    def to_record(self, i: int = 0) -> dict:
        if self.is_leaf(i):
            return {"leaf": float(self.value[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "missing_left": bool(self.missing_left[i]),
            "left": self.to_record(int(self.left[i])),
            "right": self.to_record(int(self.right[i])),
        }

    @classmethod
    def from_record(cls, record: dict) -> "Tree":
        b = _TreeBuilder()

        def rec(node: dict) -> int:
            if "leaf" in node:
                return b.add_leaf(float(node["leaf"]))
            i = b.add_internal(int(node["feature"]), float(node["threshold"]),
                               bool(node["missing_left"]))
            b.left[i] = rec(node["left"])
            b.right[i] = rec(node["right"])
            return i

        rec(record)
        return b.build()

    @classmethod
    def stump(cls, feature: int, threshold: float, left_value: float, right_value: float,
              missing_left: bool = True) -> "Tree":
        return cls.from_record({
            "feature": feature, "threshold": threshold, "missing_left": missing_left,
            "left": {"leaf": left_value}, "right": {"leaf": right_value},
        })


class _TreeBuilder:
    def __init__(self):
        self.feature, self.threshold, self.missing_left = [], [], []
        self.left, self.right, self.value = [], [], []

    def _add(self, feature, threshold, missing_left, value) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.missing_left.append(missing_left)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def add_leaf(self, value: float) -> int:
        return self._add(-1, math.nan, False, value)

    def add_internal(self, feature: int, threshold: float, missing_left: bool) -> int:
        if not math.isfinite(threshold):
            raise ValueError("split thresholds must be finite")
        return self._add(feature, threshold, missing_left, 0.0)

    def build(self) -> Tree:
        return Tree(
            feature=np.array(self.feature, dtype=np.int64),
            threshold=np.array(self.threshold, dtype=float),
            missing_left=np.array(self.missing_left, dtype=bool),
            left=np.array(self.left, dtype=np.int64),
            right=np.array(self.right, dtype=np.int64),
            value=np.array(self.value, dtype=float),
        )


@dataclass
class BoostedEnsemble:
    base_score: float
    learning_rate: float
    trees: list[Tree]
    feature_names: list[str]
    loss_history: list[float] = field(default_factory=list, compare=False, repr=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def margins(self, X: np.ndarray) -> np.ndarray:
        X = self._check(X)
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict(X)
        return self.base_score + self.learning_rate * total

    def to_json(self) -> str:
        doc = {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "base_score": float(self.base_score),
            "learning_rate": float(self.learning_rate),
            "feature_names": list(self.feature_names),
            "trees": [t.to_record() for t in self.trees],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BoostedEnsemble":
        doc = json.loads(text)
        if doc.get("format") != FORMAT or doc.get("version") != FORMAT_VERSION:
            raise ValueError("not a supported ensemble document")
        return cls(
            base_score=float(doc["base_score"]),
            learning_rate=float(doc["learning_rate"]),
            trees=[Tree.from_record(r) for r in doc["trees"]],
            feature_names=list(doc["feature_names"]),
        )


def sigmoid(m: np.ndarray | float) -> np.ndarray | float:
    m = np.asarray(m, dtype=float)
    out = np.where(m >= 0, 1.0 / (1.0 + np.exp(-np.abs(m))),
                   np.exp(-np.abs(m)) / (1.0 + np.exp(-np.abs(m))))
    # keep strictly inside (0, 1)
    return np.clip(out, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def predict_margin(ensemble: BoostedEnsemble, row: Sequence[float]) -> float:
    row = np.asarray(row, dtype=float)
    if row.ndim != 1:
        raise ValueError("predict_margin takes a single row")
    return float(ensemble.margins(row[None, :])[0])


def predict_proba(ensemble: BoostedEnsemble, rows: np.ndarray) -> np.ndarray:
    return sigmoid(ensemble.margins(rows))


def logistic_loss(margin: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


def bin_edges(column: np.ndarray, max_bins: int) -> np.ndarray:
    """Upper bin bounds (observed values) for one feature; a value v lands in bin
    ``searchsorted(edges, v, 'left')``, so bin b holds edges[b-1] < v <= edges[b]."""
    vals = np.sort(column[~np.isnan(column)])
    uniq = np.unique(vals)
    if uniq.size <= 1:
        return np.empty(0)
    if uniq.size <= max_bins:
        return uniq[:-1]
    n = vals.size
    picks = vals[[(k * n) // max_bins for k in range(1, max_bins)]]
    edges = np.unique(picks)
    return edges[edges < uniq[-1]]


def _bin_matrix(X: np.ndarray, edges: list[np.ndarray], max_bins: int) -> np.ndarray:
    bins = np.empty(X.shape, dtype=np.int64)
    for j, e in enumerate(edges):
        col = X[:, j]
        b = np.searchsorted(e, col, side="left")
        b[np.isnan(col)] = max_bins  # dedicated missing slot
        bins[:, j] = b
    return bins


@njit(cache=True)
def _best_splits(bins, g, h, row_slot, n_slots, feats, n_edges, missing_bin, lam, min_leaf):
    """Histogram split search for every frontier node.

    Scans features in index order, then bins, then missing-left before missing-right,
    keeping only strict improvements, so ties resolve to the lowest feature and bin.
    """
    nf = feats.shape[0]
    nb = missing_bin + 1
    G = np.zeros((n_slots, nf, nb))
    H = np.zeros((n_slots, nf, nb))
    C = np.zeros((n_slots, nf, nb))
    for i in range(bins.shape[0]):
        s = row_slot[i]
        if s < 0:
            continue
        for fi in range(nf):
            b = bins[i, feats[fi]]
            G[s, fi, b] += g[i]
            H[s, fi, b] += h[i]
            C[s, fi, b] += 1.0
    best_gain = np.full(n_slots, -np.inf)
    best_f = np.full(n_slots, -1, dtype=np.int64)
    best_b = np.full(n_slots, -1, dtype=np.int64)
    best_left = np.zeros(n_slots, dtype=np.bool_)
    for s in range(n_slots):
        for fi in range(nf):
            gt = 0.0
            ht = 0.0
            ct = 0.0
            for b in range(nb):
                gt += G[s, fi, b]
                ht += H[s, fi, b]
                ct += C[s, fi, b]
            parent = gt * gt / (ht + lam)
            gm = G[s, fi, missing_bin]
            hm = H[s, fi, missing_bin]
            cm = C[s, fi, missing_bin]
            gc = 0.0
            hc = 0.0
            cc = 0.0
            for b in range(n_edges[fi]):
                gc += G[s, fi, b]
                hc += H[s, fi, b]
                cc += C[s, fi, b]
                for d in range(2):
                    if d == 0:
                        gl, hl, cl = gc + gm, hc + hm, cc + cm
                    else:
                        gl, hl, cl = gc, hc, cc
                    gr, hr, cr = gt - gl, ht - hl, ct - cl
                    if cl < min_leaf or cr < min_leaf:
                        continue
                    gain = gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent
                    if gain > best_gain[s]:
                        best_gain[s] = gain
                        best_f[s] = fi
                        best_b[s] = b
                        best_left[s] = d == 0
    return best_gain, best_f, best_b, best_left


def _grow_tree(bins: np.ndarray, g: np.ndarray, h: np.ndarray, feats: np.ndarray,
               edges: list[np.ndarray], cfg: TrainConfig) -> tuple[Tree, np.ndarray]:
    n = bins.shape[0]
    lam = float(cfg.l2_lambda)
    n_edges = np.array([len(edges[f]) for f in feats], dtype=np.int64)

    builder = _TreeBuilder()
    root = builder.add_leaf(0.0)
    row_node = np.zeros(n, dtype=np.int64)
    frontier = [root]
    for _ in range(cfg.max_depth):
        if not frontier:
            break
        slot_of = np.full(len(builder.feature), -1, dtype=np.int64)
        slot_of[frontier] = np.arange(len(frontier))
        row_slot = slot_of[row_node]
        gain, bf, bb, bleft = _best_splits(bins, g, h, row_slot, len(frontier), feats, n_edges,
                                           cfg.max_bins, lam, float(cfg.min_samples_leaf))
        next_frontier = []
        for s, node in enumerate(frontier):
            if not gain[s] > _MIN_GAIN:
                continue
            f = int(feats[bf[s]])
            b = int(bb[s])
            builder.feature[node] = f
            builder.threshold[node] = float(edges[f][b])
            builder.missing_left[node] = bool(bleft[s])
            lc = builder.add_leaf(0.0)
            rc = builder.add_leaf(0.0)
            builder.left[node], builder.right[node] = lc, rc
            rows = row_node == node
            rb = bins[rows, f]
            go_left = np.where(rb == cfg.max_bins, bool(bleft[s]), rb <= b)
            row_node[rows] = np.where(go_left, lc, rc)
            next_frontier.extend([lc, rc])
        frontier = next_frontier

    n_nodes = len(builder.feature)
    Gl = np.bincount(row_node, weights=g, minlength=n_nodes)
    Hl = np.bincount(row_node, weights=h, minlength=n_nodes)
    for i in range(n_nodes):
        if builder.feature[i] < 0:
            builder.value[i] = float(-Gl[i] / (Hl[i] + lam)) if Hl[i] + lam > 0 else 0.0
    return builder.build(), row_node


def fit(X: np.ndarray, y: np.ndarray, config: TrainConfig | None = None,
        feature_names: Sequence[str] | None = None) -> BoostedEnsemble:
    cfg = config or TrainConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2-D with one row per label")
    if X.shape[0] < 2 or X.shape[1] < 1:
        raise ValueError("need at least two rows and one feature")
    if np.isnan(y).any():
        raise ValueError("labels contain NaN")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0/1")
    if y.min() == y.max():
        raise ValueError("both classes must be present")
    if np.isinf(X).any():
        raise ValueError("features must be finite or NaN")
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in
                                                                     range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ValueError("feature_names length mismatch")

    # canonical row order: float sums in the histograms no longer depend on input order
    order = np.lexsort(tuple(X[:, j] for j in reversed(range(X.shape[1]))) + (y,))
    X, y = X[order], y[order]

    n, nfeat = X.shape
    edges = [bin_edges(X[:, j], cfg.max_bins) for j in range(nfeat)]
    bins = _bin_matrix(X, edges, cfg.max_bins)

    rate = y.mean()
    base = math.log(rate / (1 - rate))
    margin = np.full(n, base)
    rng = np.random.default_rng(cfg.seed)
    n_sub = max(1, int(round(cfg.feature_fraction * nfeat)))
    loss = logistic_loss(margin, y)
    history = [loss]
    trees = []
    for _ in range(cfg.num_trees):
        p = sigmoid(margin)
        g = p - y
        h = p * (1 - p)
        if n_sub < nfeat:
            feats = np.sort(rng.choice(nfeat, size=n_sub, replace=False))
        else:
            feats = np.arange(nfeat)
        tree, row_leaf = _grow_tree(bins, g, h, feats, edges, cfg)
        step = cfg.learning_rate * tree.value[row_leaf]
        new_loss = logistic_loss(margin + step, y)
        shrink = 0
        # Newton steps can overshoot on saturated leaves; halve until the loss does not rise
        while new_loss > loss and shrink < _MAX_BACKTRACK:
            tree.value *= 0.5
            step *= 0.5
            new_loss = logistic_loss(margin + step, y)
            shrink += 1
        if new_loss > loss:
            tree.value[:] = 0.0
            step[:] = 0.0
            new_loss = loss
        assert new_loss <= loss + 1e-9, "training loss increased"
        margin = margin + step
        loss = new_loss
        history.append(loss)
        trees.append(tree)
    return BoostedEnsemble(base, cfg.learning_rate, trees, names, history)
