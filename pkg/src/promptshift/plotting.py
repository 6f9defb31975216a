"""Static figures written next to the CSV tables."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
COLORS = {"source": "#9a9a9a", "adapted": "#1f5fa8", "mean": "#c2552b", "covariance": "#3b8c5a"}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # no software/date metadata, so reruns produce identical files
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def _grouped_bars(ax, labels, series: dict[str, Sequence[float]]):
    x = np.arange(len(labels))
    width = 0.8 / max(len(series), 1)
    for k, (name, values) in enumerate(series.items()):
        ax.bar(x + (k - (len(series) - 1) / 2) * width, values, width,
               label=name, color=COLORS.get(name))
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right")


def plot_wer_by_condition(rows: Sequence[dict], path: str | Path, label_key: str = "condition") -> Path:
    """Bars of source vs adapted WER, one group per row."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.5, 0.7 * len(rows) + 1.5), 2.8))
        labels = [str(r[label_key]) for r in rows]
        _grouped_bars(ax, labels, {
            "source": [r["source_wer"] for r in rows],
            "adapted": [r["adapted_wer"] for r in rows],
        })
        ax.set_ylabel("WER")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_ladder(rows: Sequence[dict], path: str | Path) -> Path:
    """WER against noise level for the graded-noise ladder."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.5, 2.6))
        sigma = [r["sigma"] for r in rows]
        ax.plot(sigma, [r["source_wer"] for r in rows], "o-", color=COLORS["source"], label="source")
        ax.plot(sigma, [r["adapted_wer"] for r in rows], "s-", color=COLORS["adapted"], label="adapted")
        ax.set_xlabel(r"noise $\sigma$")
        ax.set_ylabel("WER")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_ablation(rows: Sequence[dict], path: str | Path) -> Path:
    """Adapted WER and blank-frame fraction per ablation variant."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(6.5, 2.8))
        labels = [r["variant"] for r in rows]
        x = np.arange(len(rows))
        axes[0].bar(x, [r["adapted_wer"] for r in rows], color=COLORS["adapted"])
        axes[0].axhline(rows[0]["source_wer"], color=COLORS["source"], ls="--", lw=1, label="source")
        axes[0].set_ylabel("adapted WER")
        axes[0].legend(frameon=False)
        axes[1].bar(x, [r["blank_fraction"] for r in rows], color=COLORS["mean"])
        axes[1].set_ylabel("blank-frame fraction")
        for ax in axes:
            ax.set_xticks(x)
            ax.set_xticklabels(labels, rotation=40, ha="right")
        return _save(fig, path)


def plot_shift(rows: Sequence[dict], path: str | Path) -> Path:
    """Stacked mean and covariance shift per condition (log scale)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.5, 0.7 * len(rows) + 1.5), 2.8))
        labels = [r["condition"] for r in rows]
        _grouped_bars(ax, labels, {
            "mean": [max(r["mean_shift"], 1e-12) for r in rows],
            "covariance": [max(r["covariance_shift"], 1e-12) for r in rows],
        })
        ax.set_yscale("log")
        ax.set_ylabel("shift")
        ax.legend(frameon=False)
        return _save(fig, path)
