"""Figures for the training log and the throughput benchmark."""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.2),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "savefig.bbox": "tight",
}

# pinned so that identical inputs give identical PNG bytes
_SAVE = {"metadata": {"Software": None}}


def training_curves(records: Sequence[dict], path: Union[str, Path]) -> None:
    """Loss per epoch on the left axis, dev BLEU and EM on the right."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        epochs = [r["epoch"] for r in records]
        ax.plot(epochs, [r["loss"] for r in records], color="tab:blue", label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss per instance")
        ax.set_yscale("log")
        evals = [r for r in records if "dev_bleu" in r]
        if evals:
            right = ax.twinx()
            right.grid(False)
            ex = [r["epoch"] for r in evals]
            right.plot(ex, [r["dev_bleu"] for r in evals], "o-", color="tab:orange", ms=3, label="dev BLEU")
            right.plot(ex, [r["dev_em"] for r in evals], "s--", color="tab:green", ms=3, label="dev EM")
            right.set_ylim(0, 100)
            right.set_ylabel("score")
            right.legend(loc="center right", frameon=False)
        ax.legend(loc="upper right", frameon=False)
        fig.savefig(path, **_SAVE)
        plt.close(fig)


def throughput_figure(rows: Sequence[dict], path: Union[str, Path]) -> None:
    """Decode seconds against draft length, one line per model."""
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2, figsize=(8.0, 3.2))
        for model in dict.fromkeys(r["model"] for r in rows):
            sub = sorted((r for r in rows if r["model"] == model), key=lambda r: r["length"])
            lengths = [r["length"] for r in sub]
            left.plot(lengths, [r["seconds"] for r in sub], "o-", label=model)
            right.plot(lengths, [r["words_per_second"] for r in sub], "o-", label=model)
        left.set_xlabel("draft length N")
        left.set_ylabel("decode time (s)")
        right.set_xlabel("draft length N")
        right.set_ylabel("words / second")
        right.set_yscale("log")
        left.legend(frameon=False)
        fig.savefig(path, **_SAVE)
        plt.close(fig)
