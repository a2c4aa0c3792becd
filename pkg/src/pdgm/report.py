"""Figure rendering for CLI reports.

Each function draws one matplotlib figure to a file next to the delimited
output it illustrates.  Rendering always goes through the Agg backend so
the CLI works on headless machines.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def scatter_figure(samples: np.ndarray, path, title: str = "") -> None:
    """2-d scatter of generated or dataset points."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    fig, ax = plt.subplots(figsize=(5, 5))
    if samples.shape[1] >= 2:
        ax.scatter(samples[:, 0], samples[:, 1], s=2, alpha=0.4, linewidths=0)
        ax.set_xlabel("x0")
        ax.set_ylabel("x1")
    else:
        ax.hist(samples[:, 0], bins=80, density=True)
        ax.set_xlabel("x0")
    ax.set_aspect("equal" if samples.shape[1] >= 2 else "auto")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def loss_figure(history, path, title: str = "training loss") -> None:
    """Loss-versus-step curve from (step, loss) pairs."""
    history = np.asarray(history, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    if history.size:
        ax.plot(history[:, 0], history[:, 1], lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def sweep_figure(step_counts, values, path, metric: str = "mmd") -> None:
    """Metric as a function of the number of backward steps (log-x)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(step_counts, values, marker="o")
    ax.set_xscale("log")
    ax.set_xlabel("backward steps")
    ax.set_ylabel(metric)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
