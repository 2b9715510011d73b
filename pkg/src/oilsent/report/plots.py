"""Static SVG figures with reproducible bytes."""

from __future__ import annotations

import io
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..ingestion import atomic_write_text  # noqa: E402

_STYLE = {
    "svg.hashsalt": "oilsent",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path: Path) -> None:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    atomic_write_text(path, buf.getvalue())


def correlation_heatmap(corr: np.ndarray, labels: Sequence[str], path: Path) -> None:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.6, 3.8))
        masked = np.ma.masked_invalid(corr)
        im = ax.imshow(masked, cmap="RdBu_r", vmin=-1, vmax=1)
        ax.set_xticks(range(len(labels)), labels, rotation=30, ha="right")
        ax.set_yticks(range(len(labels)), labels)
        for i in range(corr.shape[0]):
            for j in range(corr.shape[1]):
                text = "n/a" if np.isnan(corr[i, j]) else f"{corr[i, j]:.2f}"
                ax.text(j, i, text, ha="center", va="center", fontsize=8)
        fig.colorbar(im, ax=ax, fraction=0.046)
        ax.set_title("Pairwise polarity correlation")
        fig.tight_layout()
        _save(fig, path)


def dimension_boxplot(quartiles: Mapping[str, Mapping[str, Mapping[str, float]]],
                      path: Path) -> None:
    """Side-by-side boxes per dimension, one colour per model, from precomputed quartiles."""
    models = list(quartiles)
    dims = sorted({d for q in quartiles.values() for d in q},
                  key=("relevance", "polarity", "intensity", "uncertainty",
                       "forwardness").index)
    colours = ["#4C72B0", "#DD8452", "#55A868", "#C44E52"]
    width = 0.8 / max(len(models), 1)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 3.4))
        for k, m in enumerate(models):
            stats, pos = [], []
            for i, d in enumerate(dims):
                q = quartiles[m].get(d)
                if q is None:
                    continue
                stats.append({"med": q["median"], "q1": q["q25"], "q3": q["q75"],
                              "whislo": q["min"], "whishi": q["max"], "label": d})
                pos.append(i + (k - (len(models) - 1) / 2) * width)
            if stats:
                arts = ax.bxp(stats, positions=pos, widths=width * 0.9, showfliers=False,
                              patch_artist=True)
                for box in arts["boxes"]:
                    box.set_facecolor(colours[k % len(colours)])
                ax.plot([], [], color=colours[k % len(colours)], lw=6, label=m)
        ax.set_xticks(range(len(dims)), dims)
        ax.set_ylabel("weekly mean")
        ax.legend(frameon=False)
        ax.set_title("Sentiment dimension distributions")
        fig.tight_layout()
        _save(fig, path)


def metric_bars(rows: Sequence[Mapping], metrics: Sequence[str], path: Path) -> None:
    """Grouped bars of per-set means with fold standard deviations as error bars."""
    sets = [r["set"] for r in rows]
    x = np.arange(len(sets))
    width = 0.8 / len(metrics)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 3.4))
        for k, m in enumerate(metrics):
            means = [np.nan if r[f"{m}_mean"] is None else r[f"{m}_mean"] for r in rows]
            stds = [0.0 if r[f"{m}_std"] is None else r[f"{m}_std"] for r in rows]
            ax.bar(x + (k - (len(metrics) - 1) / 2) * width, means, width, yerr=stds,
                   capsize=2, label=m)
        ax.axhline(0.0, color="black", lw=0.6)
        ax.set_xticks(x, sets, rotation=20, ha="right")
        ax.legend(frameon=False, ncol=len(metrics))
        ax.set_title("Model comparisons")
        fig.tight_layout()
        _save(fig, path)


def importance_bars(features: Sequence[str], values: Sequence[float], path: Path,
                    top: int = 20) -> None:
    names = list(features)[:top][::-1]
    vals = list(values)[:top][::-1]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5.6, 0.25 * len(names) + 1.2))
        ax.barh(range(len(names)), vals, color="#4C72B0")
        ax.set_yticks(range(len(names)), names)
        ax.set_xlabel("mean |SHAP| (log-odds)")
        ax.set_title("Global feature importance")
        fig.tight_layout()
        _save(fig, path)
