"""Immutable value objects passed between pipeline stages.

A :class:`VideoRecord` is the unit of work: one clip plus everything the
pipeline has learned about it. Stages never mutate records; they return new
ones via the ``with_*`` helpers, so a record's decision trail is append-only
and a stage can be re-run against the same input without side effects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

CAPTION_SOURCES = frozenset({"original", "generated", "none"})
STATUSES = frozenset({"pending", "kept", "dropped"})
ACTIONS = frozenset({"keep", "drop", "transform"})

# Declared closed ranges for every bounded metric. pixel_cost is a
# nonnegative integer with no upper bound and is deliberately absent.
METRIC_RANGES: dict[str, tuple[float, float]] = {
    "char_repetition": (0.0, 1.0),
    "frame_text_similarity": (-1.0, 1.0),
    "aesthetic": (0.0, 10.0),
    "ocr_area_ratio": (0.0, 1.0),
    "motion_score": (0.0, 1.0),
}

METRIC_NAMES = tuple(METRIC_RANGES) + ("pixel_cost",)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class MediaInfo:
    """Probed stream properties of one clip."""

    width: int
    height: int
    num_frames: int
    fps: float
    duration: float

    def __post_init__(self) -> None:
        _require(isinstance(self.width, int) and self.width > 0, "width must be a positive int")
        _require(isinstance(self.height, int) and self.height > 0, "height must be a positive int")
        _require(
            isinstance(self.num_frames, int) and self.num_frames > 0,
            "num_frames must be a positive int",
        )
        _require(math.isfinite(self.fps) and self.fps > 0, "fps must be finite and positive")
        _require(
            math.isfinite(self.duration) and self.duration > 0,
            "duration must be finite and positive",
        )
        # Containers may carry a duration up to one frame off the frame count.
        _require(
            abs(self.duration - self.num_frames / self.fps) <= 1.0 / self.fps + 1e-9,
            f"duration {self.duration} inconsistent with {self.num_frames} frames at {self.fps} fps",
        )

    @property
    def short_side(self) -> int:
        return min(self.width, self.height)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "width": self.width,
            "height": self.height,
            "num_frames": self.num_frames,
            "fps": self.fps,
            "duration": self.duration,
        }

    @classmethod
    def from_json_dict(cls, d: Mapping[str, Any]) -> "MediaInfo":
        unknown = set(d) - {"width", "height", "num_frames", "fps", "duration"}
        _require(not unknown, f"unknown media keys: {sorted(unknown)}")
        return cls(
            width=d["width"],
            height=d["height"],
            num_frames=d["num_frames"],
            fps=float(d["fps"]),
            duration=float(d["duration"]),
        )


@dataclass(frozen=True)
class MetricSet:
    """Scores attached to a record; absent metrics are None."""

    char_repetition: float | None = None
    frame_text_similarity: float | None = None
    aesthetic: float | None = None
    ocr_area_ratio: float | None = None
    motion_score: float | None = None
    pixel_cost: int | None = None

    def __post_init__(self) -> None:
        for name, (lo, hi) in METRIC_RANGES.items():
            v = getattr(self, name)
            if v is None:
                continue
            _require(isinstance(v, float) and math.isfinite(v), f"{name} must be a finite float")
            _require(lo <= v <= hi, f"{name}={v} outside [{lo}, {hi}]")
        if self.pixel_cost is not None:
            _require(
                isinstance(self.pixel_cost, int) and self.pixel_cost >= 0,
                "pixel_cost must be a nonnegative int",
            )

    def get(self, name: str) -> float | int | None:
        _require(name in METRIC_NAMES, f"unknown metric {name!r}")
        return getattr(self, name)

    def with_value(self, name: str, value: float | int) -> "MetricSet":
        _require(name in METRIC_NAMES, f"unknown metric {name!r}")
        return replace(self, **{name: value})

    def present(self) -> dict[str, float | int]:
        out: dict[str, float | int] = {}
        for name in METRIC_NAMES:
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        return out

    def to_json_dict(self) -> dict[str, Any]:
        return self.present()

    @classmethod
    def from_json_dict(cls, d: Mapping[str, Any]) -> "MetricSet":
        unknown = set(d) - set(METRIC_NAMES)
        _require(not unknown, f"unknown metric keys: {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        for name in METRIC_RANGES:
            if name in d:
                kwargs[name] = float(d[name])
        if "pixel_cost" in d:
            kwargs["pixel_cost"] = d["pixel_cost"]
        return cls(**kwargs)


@dataclass(frozen=True)
class DecisionEntry:
    """One stage's verdict on a record."""

    stage: str
    action: str
    reason: str
    detail: str = ""
    value: float | None = None

    def __post_init__(self) -> None:
        _require(bool(self.stage), "stage must be nonempty")
        _require(self.action in ACTIONS, f"action must be one of {sorted(ACTIONS)}")
        _require(bool(self.reason), "reason must be nonempty")
        if self.value is not None:
            _require(
                isinstance(self.value, float) and math.isfinite(self.value),
                "value must be a finite float",
            )

    def to_json_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"stage": self.stage, "action": self.action, "reason": self.reason}
        if self.detail:
            out["detail"] = self.detail
        if self.value is not None:
            out["value"] = self.value
        return out

    @classmethod
    def from_json_dict(cls, d: Mapping[str, Any]) -> "DecisionEntry":
        unknown = set(d) - {"stage", "action", "reason", "detail", "value"}
        _require(not unknown, f"unknown decision keys: {sorted(unknown)}")
        return cls(
            stage=d["stage"],
            action=d["action"],
            reason=d["reason"],
            detail=d.get("detail", ""),
            value=float(d["value"]) if "value" in d else None,
        )


@dataclass(frozen=True)
class VideoRecord:
    """One clip flowing through the pipeline."""

    id: str
    media_path: str
    caption: str | None = None
    caption_source: str = "none"
    meta: Mapping[str, Any] | None = None
    media: MediaInfo | None = None
    metrics: MetricSet = MetricSet()
    decisions: tuple[DecisionEntry, ...] = ()
    status: str = "pending"
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        _require(isinstance(self.id, str) and bool(self.id), "id must be a nonempty string")
        _require(
            isinstance(self.media_path, str) and bool(self.media_path),
            "path must be a nonempty string",
        )
        _require(
            self.caption_source in CAPTION_SOURCES,
            f"caption_source must be one of {sorted(CAPTION_SOURCES)}",
        )
        if self.caption is None:
            _require(
                self.caption_source == "none",
                "caption_source must be 'none' when no caption is present",
            )
        else:
            _require(isinstance(self.caption, str) and bool(self.caption), "caption must be nonempty")
            _require(
                self.caption_source in ("original", "generated"),
                "a present caption must be original or generated",
            )
        _require(self.status in STATUSES, f"status must be one of {sorted(STATUSES)}")
        if self.status == "dropped":
            _require(
                any(d.action == "drop" for d in self.decisions),
                "dropped records need at least one drop decision",
            )

    @property
    def dropped(self) -> bool:
        return self.status == "dropped"

    def with_decision(self, entry: DecisionEntry, status: str | None = None) -> "VideoRecord":
        return replace(
            self,
            decisions=self.decisions + (entry,),
            status=self.status if status is None else status,
        )

    def with_metric(self, name: str, value: float | int) -> "VideoRecord":
        return replace(self, metrics=self.metrics.with_value(name, value))

    def with_caption(self, text: str, source: str) -> "VideoRecord":
        return replace(self, caption=text, caption_source=source)

    def with_media(self, media: MediaInfo) -> "VideoRecord":
        return replace(self, media=media)

    def with_media_path(self, path: str) -> "VideoRecord":
        return replace(self, media_path=path)

    def with_status(self, status: str) -> "VideoRecord":
        return replace(self, status=status)

    def with_extra(self, key: str, value: Any) -> "VideoRecord":
        merged = dict(self.extra)
        merged[key] = value
        return replace(self, extra=merged)
