"""Budgeted selection of the final training set.

Records surviving the filters compete for a global pixel budget. Each gets a
composite quality in [0, sum of weights] and a positive integer cost; the
selector maximizes total quality subject to total cost <= budget. The greedy
density heuristic, patched with the best single item, is a 1/2-approximation
of the optimum; ``exact_select`` exists to verify that bound on small
instances, not to run in production.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import SelectionError
from .model import METRIC_RANGES, MetricSet

DEFAULT_MOTION_BAND = (0.05, 0.7)


@dataclass(frozen=True)
class SelectionItem:
    record_id: str
    quality: float
    cost: int

    def __post_init__(self) -> None:
        if not self.record_id:
            raise ValueError("record_id must be nonempty")
        if not (math.isfinite(self.quality) and self.quality >= 0):
            raise ValueError("quality must be finite and nonnegative")
        if not (isinstance(self.cost, int) and self.cost > 0):
            raise ValueError("cost must be a positive int")


def oriented_value(name: str, value: float, motion_band: tuple[float, float]) -> float:
    """Map a raw metric value to [0, 1] where larger always means better.

    aesthetic scales down by its range; similarity shifts [-1, 1] to [0, 1];
    repetition and text coverage invert; motion peaks at the centre of the
    accepted band and falls off linearly to 0 at and beyond the band edges.
    """
    if name == "aesthetic":
        return value / 10.0
    if name == "frame_text_similarity":
        return (value + 1.0) / 2.0
    if name in ("char_repetition", "ocr_area_ratio"):
        return 1.0 - value
    if name == "motion_score":
        lo, hi = motion_band
        centre = (lo + hi) / 2.0
        half = (hi - lo) / 2.0
        if half <= 0.0:
            return 1.0 if value == centre else 0.0
        return max(0.0, min(1.0, 1.0 - abs(value - centre) / half))
    raise SelectionError(f"metric {name!r} has no quality orientation")


def composite_quality(
    metrics: MetricSet,
    weights: Mapping[str, float],
    motion_band: tuple[float, float] = DEFAULT_MOTION_BAND,
) -> float:
    """Weighted sum of oriented metric values.

    Raises SelectionError naming the metric if a weighted metric is absent,
    so callers can surface exactly what was not computed upstream.
    """
    total = 0.0
    for name, weight in weights.items():
        if name not in METRIC_RANGES:
            raise SelectionError(f"metric {name!r} cannot be weighted")
        if not (math.isfinite(weight) and weight >= 0):
            raise SelectionError(f"weight for {name} must be finite and nonnegative")
        if weight == 0.0:
            continue
        value = metrics.get(name)
        if value is None:
            raise SelectionError(f"missing weighted metric {name!r}")
        total += weight * oriented_value(name, float(value), motion_band)
    return total


def _greedy(items: Sequence[SelectionItem], budget: int) -> set[str]:
    ranked = sorted(items, key=lambda it: (-(it.quality / it.cost), it.record_id))
    chosen: set[str] = set()
    spent = 0
    for it in ranked:
        if spent + it.cost <= budget:
            chosen.add(it.record_id)
            spent += it.cost
    return chosen


def select_budget(items: Sequence[SelectionItem], budget: int) -> set[str]:
    """Greedy-by-density selection patched with the best single item.

    Items are ranked by quality/cost descending (ties by id ascending) and
    taken whenever they still fit; the scan continues past items that do not.
    The better of that set and the single highest-quality affordable item is
    returned, which guarantees at least half the optimal total quality.
    """
    if budget < 0:
        raise SelectionError("budget must be nonnegative")
    ids = [it.record_id for it in items]
    if len(set(ids)) != len(ids):
        raise SelectionError("duplicate record ids in selection input")
    by_id = {it.record_id: it for it in items}
    greedy = _greedy(items, budget)
    greedy_total = sum(by_id[i].quality for i in greedy)
    affordable = [it for it in items if it.cost <= budget]
    if not affordable:
        return greedy
    best_single = sorted(affordable, key=lambda it: (-it.quality, it.record_id))[0]
    if best_single.quality > greedy_total:
        return {best_single.record_id}
    return greedy


def exact_select(
    items: Sequence[SelectionItem], budget: int, max_items: int = 25
) -> set[str]:
    """Optimal subset by meet-in-the-middle enumeration.

    Refuses instances larger than max_items; this is a verification oracle
    for the greedy bound, not a production path. Ties between equally good
    subsets break toward the lexicographically smallest sorted id tuple.
    """
    if budget < 0:
        raise SelectionError("budget must be nonnegative")
    n = len(items)
    if n > max_items:
        raise SelectionError(
            f"{n} items exceeds the exact-selection cap of {max_items}; use select_budget"
        )
    ids = [it.record_id for it in items]
    if len(set(ids)) != len(ids):
        raise SelectionError("duplicate record ids in selection input")

    half = n // 2
    left, right = items[:half], items[half:]

    def subsets(part: Sequence[SelectionItem]) -> list[tuple[int, float, tuple[str, ...]]]:
        out = [(0, 0.0, ())]
        for it in part:
            out += [
                (c + it.cost, q + it.quality, names + (it.record_id,))
                for c, q, names in out
            ]
        return [s for s in out if s[0] <= budget]

    right_sets = sorted(subsets(right), key=lambda s: (s[0], -s[1], sorted(s[2])))
    # prefix-best over cost: best[i] = best subset among right_sets[:i+1]
    best_by_prefix: list[tuple[float, tuple[str, ...]]] = []
    best_q, best_names = -1.0, ()
    for c, q, names in right_sets:
        if q > best_q or (q == best_q and sorted(names) < sorted(best_names)):
            best_q, best_names = q, names
        best_by_prefix.append((best_q, best_names))
    right_costs = [s[0] for s in right_sets]

    winner_q = -1.0
    winner: tuple[str, ...] = ()
    for c, q, names in subsets(left):
        i = bisect_right(right_costs, budget - c) - 1
        if i < 0:
            continue
        rq, rnames = best_by_prefix[i]
        total = q + rq
        combined = tuple(sorted(names + rnames))
        if total > winner_q or (total == winner_q and combined < tuple(sorted(winner))):
            winner_q, winner = total, combined
    return set(winner)
