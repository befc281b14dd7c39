"""Speed-up re-encoding for low-motion clips.

Clips that pass the filters but sit below a motion floor can be rescued by
playing them faster: the same frames at a higher rate read as more dynamic.
Candidates must also be sharp (short side floor) and long enough that the
sped-up clip is still usable. After re-encoding, motion is re-scored with the
frame budget scaled down by the speed factor, which keeps the wall-clock
interval between sampled frames constant; scoring the same frame indices at a
new rate would by construction report the old value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import MediaError
from .media import SamplePlan, reencode_speedup, sample_frames
from .metrics import motion_score
from .model import DecisionEntry, VideoRecord

STAGE = "accelerate"


@dataclass(frozen=True)
class AccelerationPolicy:
    motion_low: float = 0.05
    min_short_side: int = 512
    min_duration_s: float = 4.0
    speed_factor: float = 2.0
    replace: bool = True

    def __post_init__(self) -> None:
        if not (0.0 <= self.motion_low <= 1.0):
            raise ValueError("motion_low must be in [0, 1]")
        if self.min_short_side < 1:
            raise ValueError("min_short_side must be >= 1")
        if not (math.isfinite(self.min_duration_s) and self.min_duration_s > 0):
            raise ValueError("min_duration_s must be positive")
        if not (math.isfinite(self.speed_factor) and self.speed_factor >= 1.0):
            raise ValueError("speed_factor must be >= 1.0")


def is_candidate(record: VideoRecord, policy: AccelerationPolicy) -> bool:
    """Active, probed, scored below the motion floor, sharp and long enough."""
    if record.dropped or record.media is None:
        return False
    motion = record.metrics.motion_score
    if motion is None or motion >= policy.motion_low:
        return False
    return (
        record.media.short_side >= policy.min_short_side
        and record.media.duration >= policy.min_duration_s
    )


def select_candidates(
    records: Sequence[VideoRecord], policy: AccelerationPolicy
) -> list[VideoRecord]:
    return [r for r in records if is_candidate(r, policy)]


def accelerated_path(media_path: str, speed_factor: float) -> str:
    """Sibling path with a .x<factor> marker: clip.mp4 -> clip.x2.mp4."""
    p = Path(media_path)
    return str(p.with_name(f"{p.stem}.x{speed_factor:g}{p.suffix}"))


def rescore_plan(plan: SamplePlan, speed_factor: float) -> SamplePlan:
    """Shrink the sampling budget so sampled frames stay a fixed wall-clock
    interval apart after the speed-up."""
    n = max(2, round((plan.max_frames - 1) / speed_factor) + 1)
    return SamplePlan(max_frames=n, strategy=plan.strategy)


def accelerate_record(
    record: VideoRecord,
    policy: AccelerationPolicy,
    plan: SamplePlan,
    downscale_edge: int = 64,
    ffmpeg_tool=None,
) -> VideoRecord:
    """Re-encode one candidate and re-score its motion.

    On media failure the original record is kept with a warning decision;
    acceleration never silently drops anything.
    """
    out_path = accelerated_path(record.media_path, policy.speed_factor)
    old_motion = record.metrics.motion_score
    try:
        new_info = reencode_speedup(
            record.media_path, out_path, policy.speed_factor, ffmpeg_tool
        )
        new_frames = sample_frames(
            out_path, rescore_plan(plan, policy.speed_factor), new_info, ffmpeg_tool
        )
    except MediaError as e:
        entry = DecisionEntry(STAGE, "keep", "accel_failed", detail=f"{e.code}: {e}")
        return record.with_decision(entry)
    new_motion = motion_score(new_frames, downscale_edge)
    old_text = f"{old_motion:.6g}" if old_motion is not None else "unscored"
    entry = DecisionEntry(
        STAGE,
        "transform",
        "accelerated",
        detail=f"factor={policy.speed_factor:g} motion {old_text} -> {new_motion:.6g}",
        value=new_motion,
    )
    out = record.with_metric("motion_score", new_motion).with_media(new_info)
    if policy.replace:
        out = out.with_media_path(out_path)
    else:
        out = out.with_extra("accelerated_path", out_path)
    return out.with_decision(entry)
