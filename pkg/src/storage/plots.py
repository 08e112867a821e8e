"""Optional PNG figures of the run tables (matplotlib, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402


def plot_loss_curve(loss_curve: pd.DataFrame, path: str | Path) -> Path:
    """Total and CE loss per optimizer step, sessions separated by dashed lines."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = range(len(loss_curve))
    ax.plot(steps, loss_curve["total"], label="total", linewidth=1.2)
    ax.plot(steps, loss_curve["ce"], label="ce", linewidth=0.8, alpha=0.7)
    boundaries = loss_curve.index[loss_curve["session"].diff().fillna(0) != 0]
    for b in boundaries:
        ax.axvline(b, color="grey", linestyle="--", linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_sweep(sweep: pd.DataFrame, parameter: str, path: str | Path) -> Path:
    """Accuracy per split against the swept value, with CI error bars."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for split, rows in sweep.groupby("split", sort=True):
        ax.errorbar(rows["value"].astype(str), rows["accuracy"], yerr=rows["ci95"], marker="o",
                    capsize=3, label=split)
    ax.set_xlabel(parameter)
    ax.set_ylabel("accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
