"""Distribution reporting: histograms and quantiles over metric values.

Histograms always span the metric's declared range with uniform bins, so
runs over different corpora are directly comparable. Bins are half-open
[lo, hi) except the last, which closes at the range top.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import METRIC_RANGES

# Metrics that get a histogram file per run. pixel_cost has no upper bound
# and is summarized in summary.json instead.
HISTOGRAM_METRICS = tuple(METRIC_RANGES)

DEFAULT_BINS = 20

QUANTILE_POINTS = {"p10": 0.10, "p50": 0.50, "p90": 0.90}


@dataclass(frozen=True)
class Histogram:
    metric: str
    edges: tuple[float, ...]
    counts: tuple[int, ...]
    total: int
    quantiles: dict[str, float]

    def __post_init__(self) -> None:
        if len(self.edges) != len(self.counts) + 1:
            raise ValueError("edge/count length mismatch")
        if sum(self.counts) != self.total:
            raise ValueError("counts do not sum to total")


def bin_edges(lo: float, hi: float, bins: int) -> tuple[float, ...]:
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ValueError("need finite lo < hi")
    edges = [lo + i * (hi - lo) / bins for i in range(bins)]
    edges.append(hi)  # pin the top edge exactly
    return tuple(edges)


def assign_bin(value: float, edges: Sequence[float]) -> int:
    """Index of the half-open bin containing value; top edge joins the last bin."""
    if not (edges[0] <= value <= edges[-1]):
        raise ValueError(f"value {value} outside [{edges[0]}, {edges[-1]}]")
    idx = bisect_right(edges, value) - 1
    return min(idx, len(edges) - 2)


def quantiles(values: Sequence[float]) -> dict[str, float]:
    arr = np.asarray(sorted(values), dtype=np.float64)
    return {name: float(np.quantile(arr, q)) for name, q in QUANTILE_POINTS.items()}


def compute_histogram(
    metric: str, values: Sequence[float], bins: int = DEFAULT_BINS
) -> Histogram:
    if metric not in METRIC_RANGES:
        raise ValueError(f"no declared range for metric {metric!r}")
    lo, hi = METRIC_RANGES[metric]
    edges = bin_edges(lo, hi, bins)
    counts = [0] * bins
    for v in values:
        counts[assign_bin(v, edges)] += 1
    q = quantiles(values) if values else {}
    return Histogram(
        metric=metric,
        edges=edges,
        counts=tuple(counts),
        total=len(values),
        quantiles=q,
    )


def histogram_csv(hist: Histogram) -> str:
    """Render one histogram as CSV; an empty histogram is header-only."""
    lines = ["bin_lo,bin_hi,count"]
    if hist.total > 0:
        for i, count in enumerate(hist.counts):
            lines.append(f"{hist.edges[i]!r},{hist.edges[i + 1]!r},{count}")
    return "".join(line + "\n" for line in lines)
