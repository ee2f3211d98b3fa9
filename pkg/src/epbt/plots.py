"""Figure rendering for run reports.

Every report-producing CLI path writes a PNG next to its delimited output:
loss-curve projections, ancestry overlays, fitness-over-generations, the
best member's schedule genes, and the baseline training curve. Rendering is
headless (Agg) and atomic (temp file + rename).
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .taylor_loss import LossCurve


def _atomic_savefig(fig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp.png")
    os.close(fd)
    try:
        fig.savefig(tmp, format="png", dpi=120, bbox_inches="tight")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
        plt.close(fig)


def save_loss_curve_plot(curve: LossCurve, path: str | Path, title: str | None = None) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(curve.xs, curve.losses, lw=1.8)
    ax.set_xlabel("predicted probability of the correct class")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    _atomic_savefig(fig, path)


def save_ancestry_plot(
    curves: Sequence[tuple[str, LossCurve]], path: str | Path, title: str | None = None
) -> None:
    """Overlay one curve per ancestor, darker for early generations and
    lighter for late ones."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    cmap = plt.get_cmap("viridis")
    count = max(len(curves), 1)
    for i, (label, curve) in enumerate(curves):
        shade = 0.15 + 0.7 * (i / max(count - 1, 1))
        ax.plot(curve.xs, curve.losses, color=cmap(shade), lw=1.6, label=label)
    ax.set_xlabel("predicted probability of the correct class")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title)
    if len(curves) <= 12:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    _atomic_savefig(fig, path)


def save_fitness_plot(records: Sequence, path: str | Path) -> None:
    """Best and median validation fitness per generation."""
    gens = [r.generation for r in records]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(gens, [r.best_fitness for r in records], marker="o", ms=3, label="best")
    ax.plot(gens, [r.median_fitness for r in records], marker="s", ms=3, label="median")
    ax.set_xlabel("generation")
    ax.set_ylabel("validation accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.legend()
    ax.grid(alpha=0.3)
    _atomic_savefig(fig, path)


def save_schedule_plot(records: Sequence, path: str | Path, base_lr: float) -> None:
    """The best member's effective initial learning rate (log scale) and
    momentum per generation."""
    gens, lrs, moms = [], [], []
    for record in records:
        best = next(m for m in record.members if m.id == record.best_id)
        gens.append(record.generation)
        lrs.append(base_lr * best.genome.lr_scale)
        moms.append(best.genome.momentum)
    fig, (ax_lr, ax_mom) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax_lr.plot(gens, lrs, marker="o", ms=3)
    ax_lr.set_yscale("log")
    ax_lr.set_xlabel("generation")
    ax_lr.set_ylabel("initial learning rate")
    ax_lr.grid(alpha=0.3, which="both")
    ax_mom.plot(gens, moms, marker="o", ms=3, color="tab:orange")
    ax_mom.set_xlabel("generation")
    ax_mom.set_ylabel("momentum")
    ax_mom.set_ylim(0.0, 1.0)
    ax_mom.grid(alpha=0.3)
    fig.tight_layout()
    _atomic_savefig(fig, path)


def save_training_curve_plot(curve: Sequence, path: str | Path) -> None:
    """Validation/test accuracy per epoch for the single-model baseline."""
    epochs = [row.epoch for row in curve]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(epochs, [row.val_accuracy for row in curve], label="validation")
    ax.plot(epochs, [row.test_accuracy for row in curve], label="test")
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.legend()
    ax.grid(alpha=0.3)
    _atomic_savefig(fig, path)
