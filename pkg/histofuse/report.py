"""SVG rendering of training curves, confusion heatmaps and swarm traces.

Output is deterministic for identical inputs: the SVG id salt is fixed, the
creation date is omitted and text is kept as ``<text>`` elements. Each drawn
series and each heatmap cell label carries a ``gid`` so the documents can be
checked by id.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ConfigError, ReportInputError  # noqa: E402
from .metrics import ConfusionMatrix  # noqa: E402
from .optim import EpochHistory  # noqa: E402


logger = logging.getLogger(__name__)

CURVES_FILENAME = "curves.svg"
CONFUSION_FILENAME = "confusion.svg"
PSO_TRACE_FILENAME = "pso_trace.svg"

_RC = {
    "svg.fonttype": "none",
    "svg.hashsalt": "histofuse",
    "font.family": "DejaVu Sans",
}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info("wrote %s", path)
    return path


def _epoch_limits(epochs: Sequence[int]) -> tuple[float, float]:
    first, last = min(epochs), max(epochs)
    if first == last:
        return first - 0.5, last + 0.5
    return float(first), float(last)


def render_curves(history: EpochHistory, path: str | Path, title: str = "Accuracy/Loss vs Epoch") -> Path:
    """Accuracy and loss panels over the epochs recorded in *history*."""
    if len(history) == 0:
        raise ReportInputError("history has no data rows", line=2)
    epochs = [row.epoch for row in history.rows]
    with plt.rc_context(_RC):
        fig, (acc_ax, loss_ax) = plt.subplots(1, 2, figsize=(10, 4))
        acc_ax.plot(epochs, [r.train_acc for r in history.rows], marker="o", label="train", gid="train_acc")
        acc_ax.plot(epochs, [r.val_acc for r in history.rows], marker="o", label="validation", gid="val_acc")
        acc_ax.set_ylabel("accuracy")
        loss_ax.plot(epochs, [r.train_loss for r in history.rows], marker="o", label="train", gid="train_loss")
        loss_ax.plot(epochs, [r.val_loss for r in history.rows], marker="o", label="validation", gid="val_loss")
        loss_ax.set_ylabel("loss")
        for ax in (acc_ax, loss_ax):
            ax.set_xlabel("epoch")
            ax.set_xlim(*_epoch_limits(epochs))
            ax.grid(True, alpha=0.3)
            ax.legend()
        fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, Path(path))


def render_confusion(cm: ConfusionMatrix, path: str | Path, title: str = "Confusion Matrix") -> Path:
    """Heatmap whose cell ``(i, j)`` is labelled with ``cm.counts[i, j]`` under gid ``cell_i_j``."""
    counts = np.asarray(cm.counts)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(1.2 * cm.k + 2.5, 1.2 * cm.k + 2))
        ax.imshow(counts, cmap="Blues", vmin=0, vmax=max(1, int(counts.max())))
        threshold = counts.max() / 2.0
        for i in range(cm.k):
            for j in range(cm.k):
                ax.text(
                    j,
                    i,
                    str(int(counts[i, j])),
                    ha="center",
                    va="center",
                    color="white" if counts[i, j] > threshold else "black",
                    gid=f"cell_{i}_{j}",
                )
        ax.set_xticks(range(cm.k), labels=list(cm.labels))
        ax.set_yticks(range(cm.k), labels=list(cm.labels))
        ax.set_xlabel("predicted")
        ax.set_ylabel("actual")
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, Path(path))


def render_pso_trace(trace: Sequence[tuple[int, float, float, float]], path: str | Path) -> Path:
    """Global-best fitness per swarm iteration."""
    if not trace:
        raise ConfigError("swarm trace has no rows")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot([row[0] for row in trace], [row[1] for row in trace], marker="o", markersize=3, gid="best_fitness")
        ax.set_xlabel("iteration")
        ax.set_ylabel("best validation loss")
        ax.set_title("PSO Convergence")
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        return _save(fig, Path(path))


def render_report(
    history: EpochHistory,
    out_dir: str | Path,
    confusion: ConfusionMatrix | None = None,
) -> list[Path]:
    out = Path(out_dir)
    written = [render_curves(history, out / CURVES_FILENAME)]
    if confusion is not None:
        written.append(render_confusion(confusion, out / CONFUSION_FILENAME))
    return written


__all__ = [
    "CONFUSION_FILENAME",
    "CURVES_FILENAME",
    "PSO_TRACE_FILENAME",
    "render_confusion",
    "render_curves",
    "render_pso_trace",
    "render_report",
]
