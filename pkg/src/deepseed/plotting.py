"""Matplotlib figures written next to the CSV/JSON reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "savefig.bbox": "tight",
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}
TEST_COLOR = "tab:blue"
TRAIN_COLOR = "tab:orange"


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def confusion(cm, classes: Sequence[str], path: str | Path, title: str = "", normalize: bool = True) -> Path:
    cm = np.asarray(cm, dtype=np.float64)
    shown = cm / np.maximum(cm.sum(axis=1, keepdims=True), 1) if normalize else cm
    with plt.rc_context(STYLE | {"axes.grid": False}):
        fig, ax = plt.subplots(figsize=(1.2 * len(classes) + 1.5, 1.1 * len(classes) + 1.2))
        im = ax.imshow(shown, cmap="Blues", vmin=0, vmax=1 if normalize else None)
        for i in range(cm.shape[0]):
            for j in range(cm.shape[1]):
                txt = f"{shown[i, j]:.2f}" if normalize else f"{int(cm[i, j])}"
                ax.text(j, i, txt, ha="center", va="center",
                        color="white" if shown[i, j] > 0.6 * shown.max() else "black")
        ax.set_xticks(range(len(classes)), classes, rotation=30, ha="right")
        ax.set_yticks(range(len(classes)), classes)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        return _save(fig, path)


def accuracy_boxes(reports, path: str | Path) -> Path:
    """Per-subject fold accuracies, test and train side by side."""
    reports = [r for r in reports if r.folds]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * len(reports) + 2), 3.2))
        pos = np.arange(len(reports))
        for offset, split, color in ((-0.18, "test", TEST_COLOR), (0.18, "train", TRAIN_COLOR)):
            data = [[f.test["accuracy"] if split == "test" else f.train["accuracy"] for f in r.folds]
                    for r in reports]
            bp = ax.boxplot(data, positions=pos + offset, widths=0.3, patch_artist=True, manage_ticks=False)
            for box in bp["boxes"]:
                box.set_facecolor(color)
                box.set_alpha(0.6)
            ax.plot([], [], color=color, lw=6, alpha=0.6, label=split)
        ax.set_xticks(pos, [r.subject_id for r in reports])
        ax.set_ylabel("accuracy")
        ax.set_ylim(0, 1.02)
        ax.legend(loc="lower right")
        return _save(fig, path)


def silhouettes(reports, path: str | Path) -> Path:
    reports = [r for r in reports if r.folds]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(reports) + 2), 3.0))
        data = [[f.silhouette for f in r.folds if f.silhouette is not None] or [np.nan] for r in reports]
        ax.boxplot(data, tick_labels=[r.subject_id for r in reports])
        ax.axhline(0.5, color="grey", ls="--", lw=0.8)
        ax.set_ylabel("silhouette")
        ax.set_ylim(-1, 1)
        return _save(fig, path)


def loss_curves(history: list[dict], path: str | Path, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        x = np.arange(len(history))
        ax.plot(x, [h["l_ae"] for h in history], label="reconstruction")
        cm = [np.nan if h["l_cm"] is None else h["l_cm"] for h in history]
        ax.plot(x, cm, label="clustering")
        ax.plot(x, [h["loss"] for h in history], label="total", color="black", lw=0.8)
        n_pre = sum(h["phase"] == "pretrain" for h in history)
        if n_pre:
            ax.axvline(n_pre - 0.5, color="grey", ls=":", lw=0.8)
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        if title:
            ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def sweep(table, path: str | Path) -> Path:
    """Grouped bars of accuracy per subject and setting, best setting outlined."""
    with plt.rc_context(STYLE):
        n_set = len(table.settings)
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(table.subjects) + 2), 3.0))
        width = 0.8 / n_set
        pos = np.arange(len(table.subjects))
        for j, k in enumerate(table.settings):
            vals = [table.accuracy[s].get(k) for s in table.subjects]
            vals = [np.nan if v is None else v for v in vals]
            bars = ax.bar(pos + (j - (n_set - 1) / 2) * width, vals, width, label=str(k))
            for bar, s in zip(bars, table.subjects):
                if table.best(s) == k:
                    bar.set_edgecolor("black")
                    bar.set_linewidth(1.2)
        ax.set_xticks(pos, table.subjects)
        ax.set_ylabel("test accuracy")
        ax.set_ylim(0, 1.02)
        ax.legend(title=table.parameter, ncols=min(n_set, 4), loc="lower right")
        return _save(fig, path)
