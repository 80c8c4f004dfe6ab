"""Figure rendering for benchmark runs (headless matplotlib)."""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["save_history_figure", "save_solution_figure"]


def save_history_figure(history, path, title=""):
    """Objective value against residual-evaluation count, with the monotone
    envelope of the best value seen."""
    idx = np.array([row[0] for row in history], dtype=float)
    total = np.array([row[1] + row[2] for row in history], dtype=float)
    finite = np.isfinite(total)
    env = np.minimum.accumulate(np.where(finite, total, np.inf))

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(idx[finite], total[finite], ".-", lw=1, ms=4, label="f + h")
    ax.plot(idx, env, lw=1.2, alpha=0.7, label="best so far")
    positive = total[finite] > 0
    if positive.all() and env.min() > 0:
        ax.set_yscale("log")
    ax.set_xlabel("residual evaluations")
    ax.set_ylabel("objective value")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_solution_figure(report, instance, path):
    """Problem-specific view of the final iterate."""
    problem = report.config.get("problem")
    if problem == "group_lasso":
        _plot_signal(report.x, instance.x_true, path)
    elif problem == "fh":
        _plot_simulation(report.x, instance, path)
    elif problem == "svm":
        _plot_weights(report.x, path)
    else:
        raise ValueError(f"no solution figure for problem {problem!r}")
    return path


def _plot_signal(x, x_true, path):
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(x_true, lw=1, alpha=0.6, label="true signal")
    ax.plot(x, lw=1, label="recovered")
    ax.set_xlabel("index")
    ax.set_ylabel("value")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _plot_simulation(x, instance, path):
    from .problems import fh_forward

    t = instance.t_grid
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, instance.v_data, "o", ms=2.5, alpha=0.5, label="V data")
    ax.plot(t, instance.w_data, "o", ms=2.5, alpha=0.5, label="W data")
    try:
        v, w = fh_forward(x, t, ic=instance.ic, substeps=instance.substeps)
        ax.plot(t, v, lw=1.2, label="V fit")
        ax.plot(t, w, lw=1.2, label="W fit")
    except Exception:  # diverged final iterate: plot data only
        pass
    ax.set_xlabel("t")
    ax.set_ylabel("state")
    ax.legend(frameon=False, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _plot_weights(x, path):
    fig, ax = plt.subplots(figsize=(7, 3.5))
    side = int(round(np.sqrt(x.size)))
    if side * side == x.size and side >= 8:
        im = ax.imshow(x.reshape(side, side), cmap="RdBu_r")
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_title("weight map")
    else:
        ax.stem(x)
        ax.set_xlabel("feature")
        ax.set_ylabel("weight")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
