"""Figures written next to the JSON/CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

VARIANT_LABELS = {
    "no_visual": "w/o visual",
    "random_visual": "random visual",
    "visual": "visual",
    "visual_recovered": "visual + recovered",
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_ablation(report: dict, path):
    runs = report["runs"]
    variants = list(VARIANT_LABELS)
    x = np.arange(len(variants))
    width = 0.8 / max(len(runs), 1)
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    for i, run in enumerate(runs):
        vals = [run[f"wer_{v}"] for v in variants]
        ax.bar(x + (i - (len(runs) - 1) / 2) * width, vals, width, label=f"seed {run['seed']}")
    ax.set_xticks(x)
    ax.set_xticklabels([VARIANT_LABELS[v] for v in variants])
    ax.set_ylabel("WER (%)")
    ax.set_title("Recognition WER by visual condition")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_losses(curves: dict, path, smooth: int = 25):
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    for name, losses in sorted(curves.items()):
        y = np.asarray(losses, dtype=float)
        if smooth > 1 and len(y) > smooth:
            y = np.convolve(y, np.ones(smooth) / smooth, mode="valid")
        ax.plot(y, lw=1, label=name)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("training loss")
    if len(curves) <= 12:
        ax.legend(frameon=False, fontsize=6, ncol=2)
    return _save(fig, path)


def plot_similarity(stats: dict, path):
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    edges = np.asarray(stats["score_histogram"]["edges"])
    centers = (edges[:-1] + edges[1:]) / 2
    w = edges[1] - edges[0]
    ax.bar(centers, stats["score_histogram"]["counts"], w * 0.9, alpha=0.6, label="before")
    if "score_histogram_after" in stats:
        ax.bar(centers, stats["score_histogram_after"]["counts"], w * 0.5, alpha=0.8, label="after")
    ax.axvline(stats["tau"], color="k", ls="--", lw=1)
    ax.set_xlabel("max word-image cosine")
    ax.set_ylabel("samples")
    ax.legend(frameon=False)
    return _save(fig, path)
