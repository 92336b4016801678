"""Report rendering: metrics text, CSV tables and matplotlib figures.

Every reconstruction run emits machine-readable artifacts (ARR1 arrays,
key=value metrics, CSV tables) plus rendered PNG figures of the same data
so results can be eyeballed without a separate plotting step.
"""

from __future__ import annotations

import csv
from typing import Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def write_metrics(path, metrics: dict) -> None:
    """Flat key=value lines, one metric per line, insertion order kept."""
    with open(path, "w") as fh:
        for key, value in metrics.items():
            fh.write(f"{key}={value}\n")


def read_metrics(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                key, value = line.rstrip("\n").split("=", 1)
                out[key] = value
    return out


def write_csv(path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({col: row[col] for col in columns})


def render_images(path, panels: Sequence[Tuple[str, np.ndarray]],
                  cmap: str = "viridis") -> None:
    """Side-by-side image panels with individual colorbars."""
    n = len(panels)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.2), squeeze=False)
    for ax, (title, img) in zip(axes[0], panels):
        im = ax.imshow(img, cmap=cmap, interpolation="nearest")
        ax.set_title(title, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_trace(path, trace: np.ndarray, ylabel: str = "log posterior") -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.0))
    ax.plot(trace, lw=0.7)
    ax.set_xlabel("retained sample")
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_grid_curve(path, table: Sequence[dict], best_tau: float) -> None:
    taus = [row["tau_reg"] for row in table]
    mses = [row["mse"] for row in table]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(taus, mses, "o-")
    ax.axvline(best_tau, color="crimson", ls="--", lw=1, label=f"best tau={best_tau:g}")
    if min(taus) > 0:
        ax.set_xscale("log")
    ax.set_xlabel("regularization weight")
    ax.set_ylabel("MSE")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def as_image(flat: np.ndarray, shape: Optional[Tuple[int, int]]) -> np.ndarray:
    if shape is None:
        side = int(round(np.sqrt(flat.size)))
        shape = (side, flat.size // side)
    return np.asarray(flat).reshape(shape)
