"""Batch statistics over run records and their delimited serialization."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..runtime import RunRecord

CSV_FIELDS = (
    "episode",
    "seed",
    "stl",
    "main",
    "fallbacks",
    "projected",
    "final_robustness",
    "steps",
)


@dataclass(frozen=True)
class BatchStats:
    n: int
    stl_rate: float  # percent of runs with positive final robustness
    main_rate: float  # percent of runs where the surrogate declared End
    mean_fallbacks: float
    mean_projected: float


def batch_stats(records: Sequence[RunRecord]) -> BatchStats:
    n = len(records)
    if n == 0:
        raise ValueError("no records to summarize")
    return BatchStats(
        n=n,
        stl_rate=100.0 * sum(r.stl_satisfied for r in records) / n,
        main_rate=100.0 * sum(r.main_done for r in records) / n,
        mean_fallbacks=sum(r.fallback_steps for r in records) / n,
        mean_projected=sum(r.projected_steps for r in records) / n,
    )


def write_batch_csv(path: str | Path, records: Sequence[RunRecord]) -> BatchStats:
    """One row per episode plus a trailing summary row; floats use repr so
    rewriting the same batch is byte-identical."""
    stats = batch_stats(records)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for i, r in enumerate(records):
            writer.writerow(
                [
                    i,
                    r.seed,
                    int(r.stl_satisfied),
                    int(r.main_done),
                    r.fallback_steps,
                    r.projected_steps,
                    repr(r.final_robustness),
                    len(r.actions),
                ]
            )
        writer.writerow(
            [
                "summary",
                "",
                repr(stats.stl_rate),
                repr(stats.main_rate),
                repr(stats.mean_fallbacks),
                repr(stats.mean_projected),
                "",
                "",
            ]
        )
    return stats
