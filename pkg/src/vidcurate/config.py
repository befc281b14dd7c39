"""Pipeline configuration: JSON in, validated dataclasses out.

Every knob has a default so an empty config file is runnable, but every
threshold here is an engineering choice, not a law; expect to tune them per
corpus. Unknown keys anywhere are errors, catching typos before a six-hour
batch run instead of after.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .accelerate import AccelerationPolicy
from .errors import ConfigError
from .filters import FILTERABLE, MISSING_POLICIES, FilterRule
from .model import METRIC_RANGES

# Filter stage name -> metric it gates on.
STAGE_METRICS = {
    "char_repetition": "char_repetition",
    "similarity": "frame_text_similarity",
    "aesthetic": "aesthetic",
    "ocr": "ocr_area_ratio",
    "motion": "motion_score",
    "resolution": "resolution",
}

FILTER_STAGES = tuple(STAGE_METRICS)
BRANCH_STAGES = FILTER_STAGES + ("captioning",)
TAIL_STAGES = ("accelerate", "budget_select", "report")

DEFAULT_THRESHOLDS: dict[str, dict[str, float]] = {
    "char_repetition": {"max": 0.3},
    "similarity": {"min": 0.2},
    "aesthetic": {"min": 4.0},
    "ocr": {"max": 0.05},
    "motion": {"min": 0.05, "max": 0.7},
    "resolution": {"min": 256},
}

DEFAULT_CAPTIONED_STAGES = ("char_repetition", "resolution", "similarity")
DEFAULT_UNCAPTIONED_STAGES = (
    "captioning",
    "char_repetition",
    "similarity",
    "aesthetic",
    "ocr",
    "resolution",
    "motion",
)
DEFAULT_SHARED_STAGES = ("accelerate", "budget_select", "report")

DEFAULT_WEIGHTS = {"aesthetic": 1.0, "frame_text_similarity": 1.0}

DEFAULT_BUDGET = 10**9

COST_MODES = ("target_shape", "native")


def _check_keys(d: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


@dataclass(frozen=True)
class SamplingParams:
    max_sampled_frames: int = 16
    downscale_edge: int = 64

    def __post_init__(self) -> None:
        if self.max_sampled_frames < 1:
            raise ValueError("max_sampled_frames must be >= 1")
        if self.downscale_edge < 1:
            raise ValueError("downscale_edge must be >= 1")


@dataclass(frozen=True)
class ProviderConfig:
    score_files: tuple[str, ...] = ()
    sidecars: tuple[str, ...] = ()
    timeout_s: float = 120.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.timeout_s) and self.timeout_s > 0):
            raise ValueError("timeout_s must be positive")


@dataclass(frozen=True)
class MediaToolsConfig:
    ffmpeg: str = "ffmpeg"
    ffprobe: str = "ffprobe"
    codec: str = "libx264"
    max_processes: int = 4

    def __post_init__(self) -> None:
        if self.max_processes < 1:
            raise ValueError("max_processes must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    thresholds: Mapping[str, Mapping[str, float]] = field(
        default_factory=lambda: {s: dict(b) for s, b in DEFAULT_THRESHOLDS.items()}
    )
    sampling: SamplingParams = SamplingParams()
    acceleration: AccelerationPolicy = AccelerationPolicy()
    budget: int = DEFAULT_BUDGET
    target_shape: tuple[int, int, int] = (16, 256, 256)
    cost_mode: str = "target_shape"
    captioned_stages: tuple[str, ...] = DEFAULT_CAPTIONED_STAGES
    uncaptioned_stages: tuple[str, ...] = DEFAULT_UNCAPTIONED_STAGES
    shared_stages: tuple[str, ...] = DEFAULT_SHARED_STAGES
    weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    missing_metric_policy: str = "drop"
    histogram_bins: int = 20
    providers: ProviderConfig = ProviderConfig()
    media_tools: MediaToolsConfig = MediaToolsConfig()

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        for stage in self.thresholds:
            if stage not in FILTER_STAGES:
                raise ConfigError(f"thresholds for unknown stage {stage!r}")
        for stage, bounds in self.thresholds.items():
            _check_keys(bounds, {"min", "max"}, f"thresholds.{stage}")
        # building the rules runs the bound validation
        try:
            self.rules()
        except ValueError as e:
            raise ConfigError(str(e)) from e

        for name, stages in (
            ("captioned_stages", self.captioned_stages),
            ("uncaptioned_stages", self.uncaptioned_stages),
        ):
            for stage in stages:
                if stage not in BRANCH_STAGES:
                    raise ConfigError(f"{name} contains unknown stage {stage!r}")
                if stage in FILTER_STAGES and stage not in self.thresholds:
                    raise ConfigError(f"{name} stage {stage!r} has no thresholds")
            if len(set(stages)) != len(stages):
                raise ConfigError(f"{name} repeats a stage")
        if "captioning" in self.captioned_stages:
            raise ConfigError("captioned_stages must not contain captioning")

        for stage in self.shared_stages:
            if stage not in TAIL_STAGES:
                raise ConfigError(f"shared_stages contains unknown stage {stage!r}")
        if self.shared_stages.count("budget_select") != 1:
            raise ConfigError("shared_stages needs budget_select exactly once")
        if self.shared_stages.count("report") != 1 or self.shared_stages[-1] != "report":
            raise ConfigError("shared_stages must end with report")
        if self.shared_stages[-2] != "budget_select":
            raise ConfigError("budget_select must come immediately before report")
        if self.shared_stages.count("accelerate") > 1:
            raise ConfigError("shared_stages repeats accelerate")

        if not (isinstance(self.budget, int) and self.budget > 0):
            raise ConfigError("budget must be a positive integer")
        t = self.target_shape
        if len(t) != 3 or any(not isinstance(v, int) or v < 1 for v in t):
            raise ConfigError("target_shape must be three positive ints [frames, height, width]")
        if self.cost_mode not in COST_MODES:
            raise ConfigError(f"cost_mode must be one of {list(COST_MODES)}")
        if self.missing_metric_policy not in MISSING_POLICIES:
            raise ConfigError(
                f"missing_metric_policy must be one of {list(MISSING_POLICIES)}"
            )
        if self.histogram_bins < 1:
            raise ConfigError("histogram_bins must be >= 1")
        for name, w in self.weights.items():
            if name not in METRIC_RANGES:
                raise ConfigError(f"weights name unknown metric {name!r}")
            if not (isinstance(w, (int, float)) and math.isfinite(w) and w >= 0):
                raise ConfigError(f"weight for {name} must be finite and nonnegative")

    def rules(self) -> dict[str, FilterRule]:
        """One FilterRule per configured filter stage."""
        out: dict[str, FilterRule] = {}
        for stage, bounds in self.thresholds.items():
            lo = bounds.get("min")
            hi = bounds.get("max")
            out[stage] = FilterRule(
                stage=stage,
                metric=STAGE_METRICS[stage],
                lo=float(lo) if lo is not None else None,
                hi=float(hi) if hi is not None else None,
            )
        return out

    def motion_band(self) -> tuple[float, float]:
        """Accepted motion interval, used to orient motion in selection."""
        bounds = self.thresholds.get("motion", DEFAULT_THRESHOLDS["motion"])
        lo = bounds.get("min", 0.0)
        hi = bounds.get("max", 1.0)
        return (float(lo), float(hi))

    def branch_stages(self, captioned: bool) -> tuple[str, ...]:
        return self.captioned_stages if captioned else self.uncaptioned_stages


_TOP_KEYS = {
    "thresholds",
    "sampling",
    "acceleration",
    "budget",
    "target_shape",
    "cost_mode",
    "captioned_stages",
    "uncaptioned_stages",
    "shared_stages",
    "weights",
    "missing_metric_policy",
    "histogram_bins",
    "providers",
    "media_tools",
}


def config_from_dict(raw: Mapping[str, Any]) -> PipelineConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a JSON object")
    _check_keys(raw, _TOP_KEYS, "config")
    kwargs: dict[str, Any] = {}
    try:
        if "thresholds" in raw:
            thresholds = raw["thresholds"]
            if not isinstance(thresholds, Mapping) or any(
                not isinstance(v, Mapping) for v in thresholds.values()
            ):
                raise ConfigError("thresholds must map stage names to bound objects")
            kwargs["thresholds"] = {s: dict(b) for s, b in thresholds.items()}
        if "sampling" in raw:
            _check_keys(raw["sampling"], {"max_sampled_frames", "downscale_edge"}, "sampling")
            kwargs["sampling"] = SamplingParams(**raw["sampling"])
        if "acceleration" in raw:
            _check_keys(
                raw["acceleration"],
                {"motion_low", "min_short_side", "min_duration_s", "speed_factor", "replace"},
                "acceleration",
            )
            kwargs["acceleration"] = AccelerationPolicy(**raw["acceleration"])
        if "budget" in raw:
            kwargs["budget"] = raw["budget"]
        if "target_shape" in raw:
            kwargs["target_shape"] = tuple(raw["target_shape"])
        if "cost_mode" in raw:
            kwargs["cost_mode"] = raw["cost_mode"]
        for key in ("captioned_stages", "uncaptioned_stages", "shared_stages"):
            if key in raw:
                if not isinstance(raw[key], list):
                    raise ConfigError(f"{key} must be a list of stage names")
                kwargs[key] = tuple(raw[key])
        if "weights" in raw:
            if not isinstance(raw["weights"], Mapping):
                raise ConfigError("weights must be an object")
            kwargs["weights"] = dict(raw["weights"])
        if "missing_metric_policy" in raw:
            kwargs["missing_metric_policy"] = raw["missing_metric_policy"]
        if "histogram_bins" in raw:
            kwargs["histogram_bins"] = raw["histogram_bins"]
        if "providers" in raw:
            _check_keys(raw["providers"], {"score_files", "sidecars", "timeout_s"}, "providers")
            p = dict(raw["providers"])
            for key in ("score_files", "sidecars"):
                if key in p:
                    p[key] = tuple(p[key])
            kwargs["providers"] = ProviderConfig(**p)
        if "media_tools" in raw:
            _check_keys(
                raw["media_tools"], {"ffmpeg", "ffprobe", "codec", "max_processes"}, "media_tools"
            )
            kwargs["media_tools"] = MediaToolsConfig(**raw["media_tools"])
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return PipelineConfig(**kwargs)


def load_config(path: str | Path) -> PipelineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return config_from_dict(raw)
