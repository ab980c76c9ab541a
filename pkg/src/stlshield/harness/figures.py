"""Batch summary figure for the Monte-Carlo report path."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from ..runtime import RunRecord
from .stats import BatchStats


def render_batch_figure(
    path: str | Path, records: Sequence[RunRecord], stats: BatchStats, title: str
) -> None:
    fig, (ax_rates, ax_rho) = plt.subplots(1, 2, figsize=(9, 3.6))

    labels = ["specification", "main task"]
    values = [stats.stl_rate, stats.main_rate]
    bars = ax_rates.bar(labels, values, color=["#1f77b4", "#ff7f0e"])
    ax_rates.set_ylim(0, 105)
    ax_rates.set_ylabel("success rate [%]")
    ax_rates.bar_label(bars, fmt="%.1f")
    ax_rates.set_title(f"{stats.n} runs")

    ax_rho.hist([r.final_robustness for r in records], bins=24, color="#2ca02c")
    ax_rho.axvline(0.0, color="#d62728", linewidth=1.5)
    ax_rho.set_xlabel("final robustness")
    ax_rho.set_ylabel("episodes")
    ax_rho.set_title("margin distribution")

    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
