"""Exact interventional Shapley attributions for boosted-tree ensembles.

Attributions are in margin (log-odds) units. For an explained row ``x`` and a
background row ``b`` the value of a coalition S is the model evaluated on the
hybrid point taking ``x`` on S and ``b`` elsewhere; values are averaged over the
background set.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .gbdt import BoostedEnsemble, Tree

MAX_BRUTE_FORCE_FEATURES = 15
DEFAULT_BACKGROUND_CAP = 256


@dataclass
class ShapMatrix:
    base_value: float
    values: np.ndarray  # (n_obs, n_features)
    feature_names: list[str]


@dataclass
class GlobalImportance:
    features: list[str]
    values: np.ndarray
    n_obs: int

    def rank_of(self, name: str) -> int:
        return self.features.index(name)


def _tree_shap_row(tree: Tree, x: np.ndarray, bg: np.ndarray, bg_left: np.ndarray,
                   phi: np.ndarray) -> None:
    """Accumulate one tree's attributions for row ``x`` into ``phi``.

    Each root-to-leaf path reachable by some hybrid point is characterised by the
    features that must come from ``x`` (set A) and those that must come from the
    background row (set B). The leaf's contribution is shared by the closed-form
    Shapley value of the game 1[A in S and B disjoint from S].
    """
    n_bg = bg.shape[0]

    def visit(node: int, mask: np.ndarray, A: tuple, B: tuple) -> None:
        f = tree.feature[node]
        if f < 0:
            a, b = len(A), len(B)
            if a + b == 0:
                return
            share = tree.value[node] * mask.sum() / n_bg
            if a:
                w = math.factorial(a - 1) * math.factorial(b) / math.factorial(a + b)
                for j in A:
                    phi[j] += share * w
            if b:
                w = math.factorial(a) * math.factorial(b - 1) / math.factorial(a + b)
                for j in B:
                    phi[j] -= share * w
            return
        xv = x[f]
        x_left = bool(tree.missing_left[node]) if math.isnan(xv) else xv <= tree.threshold[node]
        x_child = tree.left[node] if x_left else tree.right[node]
        o_child = tree.right[node] if x_left else tree.left[node]
        if f in A:
            visit(x_child, mask, A, B)
            return
        b_left = bg_left[node]
        if f in B:
            lm, rm = mask & b_left, mask & ~b_left
            if lm.any():
                visit(tree.left[node], lm, A, B)
            if rm.any():
                visit(tree.right[node], rm, A, B)
            return
        same = mask & (b_left == x_left)
        diff = mask & (b_left != x_left)
        if same.any():
            visit(x_child, same, A, B)
        if diff.any():
            visit(x_child, diff, A + (f,), B)
            visit(o_child, diff, A, B + (f,))

    visit(0, np.ones(n_bg, dtype=bool), (), ())


def _background_routing(tree: Tree, bg: np.ndarray) -> dict[int, np.ndarray]:
    out = {}
    for i in range(tree.n_nodes):
        f = tree.feature[i]
        if f < 0:
            continue
        col = bg[:, f]
        out[i] = np.where(np.isnan(col), tree.missing_left[i], col <= tree.threshold[i])
    return out


def tree_shap(ensemble: BoostedEnsemble, rows: np.ndarray, background: np.ndarray) -> ShapMatrix:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    if bg.shape[0] == 0:
        raise ValueError("background set is empty")
    nf = ensemble.n_features
    if rows.shape[1] != nf or bg.shape[1] != nf:
        raise ValueError("row width does not match the ensemble")
    phi = np.zeros((rows.shape[0], nf))
    for tree in ensemble.trees:
        if tree.feature[0] < 0:
            continue
        routing = _background_routing(tree, bg)
        for i, x in enumerate(rows):
            _tree_shap_row(tree, x, bg, routing, phi[i])
    phi *= ensemble.learning_rate
    # average only the tree part so a treeless model reports base_score exactly
    base = ensemble.base_score + float(np.mean(ensemble.margins(bg) - ensemble.base_score))
    return ShapMatrix(base, phi, list(ensemble.feature_names))


def brute_force_shapley(margin_fn: Callable[[np.ndarray], np.ndarray], row: Sequence[float],
                        background: np.ndarray, n_features: int) -> np.ndarray:
    """Shapley values by enumerating every coalition; the model is a black box."""
    if n_features > MAX_BRUTE_FORCE_FEATURES:
        raise ValueError(f"refusing 2^{n_features} coalitions")
    x = np.asarray(row, dtype=float)
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    if bg.shape[0] == 0:
        raise ValueError("background set is empty")
    n = n_features
    n_sub = 1 << n
    members = ((np.arange(n_sub)[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    hybrid = np.where(members[:, None, :], x[None, None, :], bg[None, :, :])
    values = np.asarray(margin_fn(hybrid.reshape(-1, n)), dtype=float)
    v = values.reshape(n_sub, bg.shape[0]).mean(axis=1)
    sizes = members.sum(axis=1)
    weight = np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n)
                       if s < n else 0.0 for s in range(n + 1)])
    phi = np.zeros(n)
    for j in range(n):
        without = ~members[:, j]
        idx = np.nonzero(without)[0]
        phi[j] = float(np.sum(weight[sizes[idx]] * (v[idx | (1 << j)] - v[idx])))
    return phi


def global_importance(shap: ShapMatrix) -> GlobalImportance:
    vals = np.asarray(shap.values, dtype=float)
    if vals.size == 0:
        raise ValueError("empty attribution matrix")
    mean_abs = np.abs(vals).mean(axis=0)
    order = sorted(range(len(shap.feature_names)),
                   key=lambda j: (-mean_abs[j], shap.feature_names[j]))
    return GlobalImportance([shap.feature_names[j] for j in order], mean_abs[order],
                            vals.shape[0])


def choose_background(train_rows: np.ndarray, cap: int = DEFAULT_BACKGROUND_CAP,
                      seed: int = 0) -> np.ndarray:
    train_rows = np.atleast_2d(train_rows)
    if train_rows.shape[0] <= cap:
        return train_rows.copy()
    idx = np.sort(np.random.default_rng(seed).choice(train_rows.shape[0], cap, replace=False))
    return train_rows[idx]


def shap_values_csv(shap: ShapMatrix, row_keys: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iso_week", "feature", "shap_value"])
    for key, row in zip(row_keys, shap.values):
        for name, v in zip(shap.feature_names, row):
            w.writerow([key, name, repr(float(v))])
    return buf.getvalue()


def importance_csv(imp: GlobalImportance) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", "mean_abs_shap"])
    for name, v in zip(imp.features, imp.values):
        w.writerow([name, repr(float(v))])
    return buf.getvalue()
