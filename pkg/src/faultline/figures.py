"""Render report figures next to the delimited outputs.

matplotlib is imported lazily with the Agg backend so headless runs and
figure-free commands never pay for it.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Sequence


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def save_eval_figure(result_dict: dict[str, Any], path: str | Path) -> Path:
    """Bar chart of agent- vs step-level accuracy for one evaluation run."""
    plt = _pyplot()
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    labels = ["agent-level", "step-level"]
    values = [result_dict["agent_accuracy"], result_dict["step_accuracy"]]
    bars = ax.bar(labels, values, color=["#4878a8", "#c87840"], width=0.55)
    for bar, value in zip(bars, values):
        ax.annotate(f"{value:.3f}", (bar.get_x() + bar.get_width() / 2, value),
                    ha="center", va="bottom", fontsize=9)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("exact-match accuracy")
    ax.set_title(f"attribution accuracy (n={result_dict['n']})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_stats_figure(stats: dict[str, Any], path: str | Path) -> Path:
    """Grouped bars of per-domain record, failure, and annotation counts."""
    plt = _pyplot()
    path = Path(path)
    domains = [d for d in stats["domains"] if d != "total"] or ["total"]
    metrics = ("records", "failures", "annotated")
    colors = ("#4878a8", "#c85050", "#58a868")

    fig, ax = plt.subplots(figsize=(max(4.5, 1.6 * len(domains) + 2), 3.2))
    width = 0.8 / len(metrics)
    for j, metric in enumerate(metrics):
        xs = [i + j * width for i in range(len(domains))]
        ys = [stats["domains"][d][metric] for d in domains]
        ax.bar(xs, ys, width=width, label=metric, color=colors[j])
    ax.set_xticks([i + width for i in range(len(domains))])
    ax.set_xticklabels(domains)
    ax.set_ylabel("count")
    ax.set_title("dataset composition")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_reward_figure(totals: Sequence[float], path: str | Path) -> Path:
    """Histogram of total rewards from a batch scoring run."""
    plt = _pyplot()
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.hist(totals, bins=20, range=(0.0, 1.0), color="#4878a8", edgecolor="white")
    ax.set_xlabel("total reward")
    ax.set_ylabel("candidates")
    ax.set_title(f"reward distribution (n={len(totals)})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
