"""Figures for eval reports: read-write paths and per-system comparisons."""
from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .decoder import Hypothesis  # noqa: E402
from .metrics import EvalRow  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 120,
    "savefig.bbox": "tight",
    "font.size": 9,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}
PATH_EXAMPLES = 3


def plot_paths(hyps: dict[str, Sequence[Hypothesis]], out: str | os.PathLike,
               n_examples: int = PATH_EXAMPLES) -> Path:
    """Staircase of frames read before each write, one panel per example line."""
    out = Path(out)
    systems = list(hyps)
    n = min(n_examples, min(len(v) for v in hyps.values()))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, n, figsize=(3.0 * n, 2.8), squeeze=False)
        for i, ax in enumerate(axes[0]):
            T = hyps[systems[0]][i].path.T
            ax.plot([0, T], [0, T], color="0.75", lw=0.6, ls=":", label="diagonal")
            for name in systems:
                d = hyps[name][i].path.delays
                if d:
                    ax.step(range(1, len(d) + 1), d, where="post", lw=1.0, label=name)
            ax.set_xlabel("target token u")
            ax.set_ylabel("frames read d(u)")
            ax.set_title(f"line {i + 1}", fontsize=8)
            ax.set_ylim(0, T + 0.5)
        axes[0][0].legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out)
        plt.close(fig)
    return out


def plot_comparison(rows: Sequence[EvalRow], out: str | os.PathLike) -> Path:
    """Quality bars next to a latency-vs-BLEU scatter, one entry per system."""
    out = Path(out)
    labels = [r.system or r.lang for r in rows]
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2, figsize=(8.0, 3.0))
        xs = range(len(rows))
        left.bar([x - 0.2 for x in xs], [r.bleu for r in rows], width=0.4, label="BLEU")
        left.bar([x + 0.2 for x in xs], [100 * r.acc for r in rows], width=0.4, label="acc x100")
        left.set_xticks(list(xs), labels, rotation=20, fontsize=7)
        left.set_ylim(0, 105)
        left.legend(fontsize=7)
        for r, name in zip(rows, labels):
            if r.latency is not None:
                right.scatter(r.latency.al_frames, r.bleu, s=18)
                right.annotate(name, (r.latency.al_frames, r.bleu), fontsize=7,
                               xytext=(3, 3), textcoords="offset points")
        right.set_xlabel("AL (encoder frames)")
        right.set_ylabel("BLEU")
        fig.tight_layout()
        fig.savefig(out)
        plt.close(fig)
    return out
