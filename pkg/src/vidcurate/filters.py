"""Threshold filters over record metrics.

A rule keeps a record when the metric value lies inside the closed interval
[min, max]; one-sided rules leave the other bound open. Every application
appends a decision entry, keep or drop, so the output manifest explains
itself. Records whose metric is absent follow the missing-value policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .model import METRIC_RANGES, DecisionEntry, VideoRecord

# "resolution" filters on min(width, height) of the probed stream rather
# than a stored metric.
FILTERABLE = tuple(METRIC_RANGES) + ("resolution",)

MISSING_POLICIES = ("drop", "keep")


@dataclass(frozen=True)
class FilterRule:
    stage: str
    metric: str
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self) -> None:
        if not self.stage:
            raise ValueError("stage must be nonempty")
        if self.metric not in FILTERABLE:
            raise ValueError(f"unknown filter metric {self.metric!r}")
        if self.lo is None and self.hi is None:
            raise ValueError(f"rule for {self.metric} needs at least one bound")
        for bound in (self.lo, self.hi):
            if bound is not None and not math.isfinite(bound):
                raise ValueError("bounds must be finite")
        if self.lo is not None and self.hi is not None and self.lo > self.hi:
            raise ValueError(f"min {self.lo} exceeds max {self.hi}")
        if self.metric in METRIC_RANGES:
            rlo, rhi = METRIC_RANGES[self.metric]
            for bound in (self.lo, self.hi):
                if bound is not None and not (rlo <= bound <= rhi):
                    raise ValueError(
                        f"bound {bound} outside the {self.metric} range [{rlo}, {rhi}]"
                    )
        elif self.lo is not None and self.lo < 0:
            raise ValueError("resolution bound must be nonnegative")


def metric_value(record: VideoRecord, metric: str) -> float | None:
    if metric == "resolution":
        return float(record.media.short_side) if record.media is not None else None
    return record.metrics.get(metric)  # type: ignore[return-value]


def apply_rule(
    record: VideoRecord, rule: FilterRule, missing_policy: str = "drop"
) -> VideoRecord:
    """Apply one rule to an active record, appending its decision."""
    if missing_policy not in MISSING_POLICIES:
        raise ValueError(f"unknown missing policy {missing_policy!r}")
    value = metric_value(record, rule.metric)
    if value is None:
        if missing_policy == "drop":
            entry = DecisionEntry(
                rule.stage, "drop", "missing_metric", detail=rule.metric
            )
            return record.with_decision(entry, status="dropped")
        entry = DecisionEntry(
            rule.stage, "keep", "missing_metric_skipped", detail=rule.metric
        )
        return record.with_decision(entry)
    if rule.lo is not None and value < rule.lo:
        entry = DecisionEntry(
            rule.stage, "drop", "below_min",
            detail=f"{rule.metric}={value:.6g} < {rule.lo:g}", value=value,
        )
        return record.with_decision(entry, status="dropped")
    if rule.hi is not None and value > rule.hi:
        entry = DecisionEntry(
            rule.stage, "drop", "above_max",
            detail=f"{rule.metric}={value:.6g} > {rule.hi:g}", value=value,
        )
        return record.with_decision(entry, status="dropped")
    entry = DecisionEntry(rule.stage, "keep", "within_bounds", value=value)
    return record.with_decision(entry)


def apply_chain(
    records: Iterable[VideoRecord],
    rules: Sequence[FilterRule],
    missing_policy: str = "drop",
) -> list[VideoRecord]:
    """Run each record through the rules in order, stopping at the first drop.

    Already dropped records pass through untouched.
    """
    out: list[VideoRecord] = []
    for record in records:
        for rule in rules:
            if record.dropped:
                break
            record = apply_rule(record, rule, missing_policy)
        out.append(record)
    return out
