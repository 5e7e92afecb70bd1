"""Matplotlib renderings for the report paths.

Every CLI command that writes a delimited artifact (decision grids,
leaderboards, aggregate statistics) drops a PNG next to it. Rendering is
headless (Agg) and each helper returns the path it wrote.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402


def render_decision_grid(xs: np.ndarray, ys: np.ndarray, probs: np.ndarray,
                         out_png: str, scatter: tuple | None = None,
                         title: str = "decision grid") -> str:
    """Heatmap of the argmax class with the winning probability as alpha.

    ``xs``/``ys`` are the flattened lattice coordinates, ``probs`` the
    per-point class probabilities; an optional (x, y, label) scatter overlays
    training points.
    """
    resolution = int(round(np.sqrt(len(xs))))
    cls = probs.argmax(axis=1).reshape(resolution, resolution)
    conf = probs.max(axis=1).reshape(resolution, resolution)
    fig, ax = plt.subplots(figsize=(5.5, 5))
    extent = (xs.min(), xs.max(), ys.min(), ys.max())
    ax.imshow(cls, origin="lower", extent=extent, cmap="coolwarm",
              alpha=np.clip((conf - conf.min()) /
                            max(conf.max() - conf.min(), 1e-9), 0.15, 1.0),
              aspect="auto", interpolation="nearest")
    if scatter is not None:
        sx, sy, sl = scatter
        ax.scatter(sx, sy, c=sl, cmap="coolwarm", edgecolors="k",
                   linewidths=0.4, s=18)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_png, dpi=130)
    plt.close(fig)
    return out_png


def render_loss_trace(losses: list[float], out_png: str,
                      title: str = "training loss") -> str:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.plot(losses, lw=0.8)
    if len(losses) > 50:
        window = max(len(losses) // 50, 2)
        kernel = np.ones(window) / window
        smooth = np.convolve(losses, kernel, mode="valid")
        ax.plot(np.arange(len(smooth)) + window - 1, smooth, lw=1.6)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_png, dpi=130)
    plt.close(fig)
    return out_png


def render_leaderboard(names: list[str], accuracies: list[float],
                       out_png: str, title: str = "validation accuracy") -> str:
    order = np.argsort(accuracies)
    fig, ax = plt.subplots(figsize=(6, 0.45 * len(names) + 1.4))
    ax.barh(np.arange(len(names)), [accuracies[i] for i in order],
            color="#4878cf")
    ax.set_yticks(np.arange(len(names)))
    ax.set_yticklabels([names[i] for i in order], fontsize=8)
    ax.set_xlabel("accuracy")
    ax.set_xlim(0, 1)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_png, dpi=130)
    plt.close(fig)
    return out_png


def render_critical_difference(mean_ranks: dict[str, float],
                               groups: list[list[str]], out_png: str,
                               title: str = "mean rank") -> str:
    """Rank line with bars joining groups that are not significantly different."""
    ordered = sorted(mean_ranks, key=mean_ranks.get)
    ranks = [mean_ranks[a] for a in ordered]
    fig, ax = plt.subplots(figsize=(7, 0.5 * len(ordered) + 1.6))
    lo, hi = min(ranks) - 0.4, max(ranks) + 0.4
    ax.set_xlim(lo, hi)
    ax.set_ylim(-len(ordered) - len(groups) - 1, 1.2)
    ax.axhline(0, color="k", lw=1)
    for r in np.arange(np.ceil(lo), np.floor(hi) + 1):
        ax.plot([r, r], [0, 0.12], color="k", lw=1)
        ax.text(r, 0.3, f"{int(r)}", ha="center", fontsize=8)
    for i, (alg, rank) in enumerate(zip(ordered, ranks)):
        y = -(i + 1)
        ax.plot([rank, rank], [0, y], color="#444444", lw=0.8)
        ax.text(rank, y - 0.18, f" {alg} ({rank:.2f})", fontsize=8,
                va="top", ha="left")
    for gi, group in enumerate(groups):
        if len(group) < 2:
            continue
        xs = [mean_ranks[a] for a in group]
        y = -len(ordered) - gi - 0.8
        ax.plot([min(xs), max(xs)], [y, y], color="#c44e52", lw=3,
                solid_capstyle="round")
    ax.axis("off")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_png, dpi=130)
    plt.close(fig)
    return out_png
