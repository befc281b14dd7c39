"""End-to-end batch curation: route, score, filter, accelerate, select, report.

Records are processed independently in a thread pool and reassembled in input
order, so output manifests are byte-identical for any worker count. A single
failing record becomes a dropped record with a reason, never an aborted run;
the run itself only aborts when the configuration is unusable or when more
than half of all records fail on provider errors (a systemic outage, not bad
data).
"""

from __future__ import annotations

import json
import logging
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from PIL import Image

from . import accelerate as accel
from . import media as media_ops
from .config import STAGE_METRICS, PipelineConfig
from .errors import (
    ConfigError,
    MediaError,
    ProtocolError,
    ProviderError,
    SelectionError,
    SystemicProviderFailure,
)
from .filters import apply_rule
from .gateway import ScorerGateway
from .manifest import save_manifest
from .media import FFmpegToolchain, Frame, SamplePlan, process_gate
from .metrics import (
    boxes_from_payload,
    char_repetition_ratio,
    embedding_from_payload,
    motion_score,
    ocr_area_ratio,
    pixel_cost,
    similarity_aggregate,
)
from .model import DecisionEntry, VideoRecord
from .selection import SelectionItem, composite_quality, select_budget
from .stats import HISTOGRAM_METRICS, Histogram, compute_histogram, histogram_csv

logger = logging.getLogger(__name__)

# Ops each stage may need when its metric is not already present.
STAGE_OPS = {
    "captioning": ("caption",),
    "similarity": ("embed_frames", "embed_text"),
    "aesthetic": ("aesthetic",),
    "ocr": ("ocr_boxes",),
}

PROVIDER_DROP_REASON = "provider_error"


@dataclass
class RunResult:
    records: list[VideoRecord]
    summary: dict
    histograms: dict[str, Histogram]
    out_dir: Path


def route(record: VideoRecord) -> str:
    # machine-generated captions keep a record on the uncaptioned branch, so
    # filtering a manifest that already went through captioning stays faithful
    if record.caption is None or record.caption_source == "generated":
        return "uncaptioned"
    return "captioned"


class _RecordContext:
    """Mutable per-record scratch: sampled frames and materialized PNGs."""

    def __init__(self, index: int, record: VideoRecord):
        self.index = index
        self.record = record
        self.frames: list[Frame] | None = None
        self.frame_paths: list[str] | None = None


class RecordProcessor:
    """Runs the per-record branch stages; shared state is read-only."""

    def __init__(
        self,
        config: PipelineConfig,
        gateway: ScorerGateway,
        frames_dir: Path,
        apply_rules: bool = True,
    ):
        self.config = config
        self.gateway = gateway
        self.frames_dir = frames_dir
        self.apply_rules = apply_rules
        self.rules = config.rules()
        self.plan = SamplePlan(max_frames=config.sampling.max_sampled_frames)
        self.ffmpeg_tool = FFmpegToolchain(
            ffmpeg=config.media_tools.ffmpeg,
            ffprobe=config.media_tools.ffprobe,
            codec=config.media_tools.codec,
        )

    def process(self, indexed: tuple[int, VideoRecord]) -> VideoRecord:
        index, record = indexed
        if record.dropped:
            return record
        ctx = _RecordContext(index, record)
        branch = route(record)
        ctx.record = record.with_decision(
            DecisionEntry("route", "keep", branch)
        )
        if not self._probe(ctx):
            return ctx.record
        for stage in self.config.branch_stages(branch == "captioned"):
            if ctx.record.dropped:
                break
            if stage == "captioning":
                self._captioning(ctx)
            else:
                self._filter_stage(ctx, stage)
        return ctx.record

    # stage implementations -------------------------------------------------

    def _probe(self, ctx: _RecordContext) -> bool:
        record = ctx.record
        try:
            info = media_ops.probe(record.media_path, self.ffmpeg_tool)
        except MediaError as e:
            ctx.record = record.with_decision(
                DecisionEntry("probe", "drop", e.code, detail=str(e)),
                status="dropped",
            )
            return False
        record = record.with_media(info)
        if record.metrics.pixel_cost is None:
            record = record.with_metric(
                "pixel_cost",
                pixel_cost(info, self.config.target_shape, self.config.cost_mode),
            )
        ctx.record = record
        return True

    def _captioning(self, ctx: _RecordContext) -> None:
        record = ctx.record
        if record.caption is not None:
            return
        try:
            payload = {"frames": self._payload_frames(ctx, "caption")}
            text = self.gateway.request("caption", record.id, payload)
        except (ProviderError, ProtocolError) as e:
            self._provider_drop(ctx, "captioning", e)
            return
        except MediaError as e:
            self._media_drop(ctx, "captioning", e)
            return
        ctx.record = record.with_caption(text, "generated").with_decision(
            DecisionEntry("captioning", "transform", "caption_generated")
        )

    def _filter_stage(self, ctx: _RecordContext, stage: str) -> None:
        metric = STAGE_METRICS[stage]
        if metric != "resolution" and ctx.record.metrics.get(metric) is None:
            try:
                self._compute_metric(ctx, stage, metric)
            except (ProviderError, ProtocolError) as e:
                self._provider_drop(ctx, stage, e)
                return
            except MediaError as e:
                self._media_drop(ctx, stage, e)
                return
        if self.apply_rules:
            ctx.record = apply_rule(
                ctx.record, self.rules[stage], self.config.missing_metric_policy
            )

    def _compute_metric(self, ctx: _RecordContext, stage: str, metric: str) -> None:
        record = ctx.record
        if metric == "char_repetition":
            if record.caption is None:
                return
            value = char_repetition_ratio(record.caption)
        elif metric == "frame_text_similarity":
            if record.caption is None:
                return
            frames_payload = {"frames": self._payload_frames(ctx, "embed_frames")}
            frame_vecs = self.gateway.request("embed_frames", record.id, frames_payload)
            text_vec = self.gateway.request(
                "embed_text", record.id, {"text": record.caption}
            )
            value = similarity_aggregate(
                [embedding_from_payload(v) for v in frame_vecs],
                embedding_from_payload(text_vec),
            )
        elif metric == "aesthetic":
            payload = {"frames": self._payload_frames(ctx, "aesthetic")}
            value = float(self.gateway.request("aesthetic", record.id, payload))
        elif metric == "ocr_area_ratio":
            payload = {"frames": self._payload_frames(ctx, "ocr_boxes")}
            raw = self.gateway.request("ocr_boxes", record.id, payload)
            assert record.media is not None
            value = ocr_area_ratio(
                boxes_from_payload(raw), record.media.width, record.media.height
            )
        elif metric == "motion_score":
            value = motion_score(
                self._sampled_frames(ctx), self.config.sampling.downscale_edge
            )
        else:  # pragma: no cover - stage table and metric table stay in sync
            raise ValueError(f"no computation for metric {metric!r}")
        ctx.record = ctx.record.with_metric(metric, value)

    # helpers ---------------------------------------------------------------

    def _provider_drop(self, ctx: _RecordContext, stage: str, e: Exception) -> None:
        code = getattr(e, "code", "protocol")
        ctx.record = ctx.record.with_decision(
            DecisionEntry(stage, "drop", PROVIDER_DROP_REASON, detail=f"{code}: {e}"),
            status="dropped",
        )

    def _media_drop(self, ctx: _RecordContext, stage: str, e: MediaError) -> None:
        ctx.record = ctx.record.with_decision(
            DecisionEntry(stage, "drop", e.code, detail=str(e)),
            status="dropped",
        )

    def _sampled_frames(self, ctx: _RecordContext) -> list[Frame]:
        if ctx.frames is None:
            ctx.frames = media_ops.sample_frames(
                ctx.record.media_path, self.plan, ctx.record.media, self.ffmpeg_tool
            )
        return ctx.frames

    def _payload_frames(self, ctx: _RecordContext, op: str) -> list[str]:
        """Frame paths for a request payload.

        PNGs hit the disk only when a live sidecar will actually read them;
        score-file answers keep the run free of frame decoding for that op.
        """
        if not self.gateway.needs_sidecar(ctx.record.id, op):
            return []
        if ctx.frame_paths is None:
            frames = self._sampled_frames(ctx)
            record_dir = self.frames_dir / f"{ctx.index:06d}"
            record_dir.mkdir(parents=True, exist_ok=True)
            paths = []
            for k, frame in enumerate(frames):
                img = Image.frombytes("RGB", (frame.width, frame.height), frame.pixels)
                path = record_dir / f"frame_{k:04d}.png"
                img.save(path, format="PNG")
                paths.append(str(path))
            ctx.frame_paths = paths
        return ctx.frame_paths


def required_ops(config: PipelineConfig, records: Sequence[VideoRecord]) -> set[str]:
    """Ops this run will certainly need given the manifest's current state."""
    needed: set[str] = set()
    for record in records:
        branch = config.branch_stages(route(record) == "captioned")
        for stage in branch:
            if stage == "captioning":
                if record.caption is None:
                    needed.add("caption")
                continue
            metric = STAGE_METRICS[stage]
            if metric == "resolution":
                continue
            if record.metrics.get(metric) is not None:
                continue
            needed.update(STAGE_OPS.get(stage, ()))
    return needed


def run(
    config: PipelineConfig,
    records: Sequence[VideoRecord],
    out_dir: str | Path,
    workers: int = 1,
) -> RunResult:
    """Run the full pipeline and write outputs into out_dir."""
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    process_gate.configure(config.media_tools.max_processes)

    uncomputable = {
        name
        for name in config.weights
        if config.weights[name] > 0
        and not any(
            STAGE_METRICS.get(s) == name
            for s in config.captioned_stages + config.uncaptioned_stages
        )
    }
    if uncomputable:
        logger.warning(
            "weighted metrics %s are not computed by any enabled stage; "
            "records lacking them will be dropped at budget_select",
            sorted(uncomputable),
        )

    gateway = ScorerGateway(
        score_files=config.providers.score_files,
        sidecar_commands=config.providers.sidecars,
        timeout_s=config.providers.timeout_s,
    )
    try:
        missing_ops = required_ops(config, records) - gateway.capabilities()
        if missing_ops:
            raise ConfigError(
                f"no score file or sidecar serves required ops: {sorted(missing_ops)}"
            )
        with tempfile.TemporaryDirectory(prefix="vidcurate_frames_") as tmp:
            processor = RecordProcessor(config, gateway, Path(tmp))
            with ThreadPoolExecutor(max_workers=workers) as pool:
                processed = list(pool.map(processor.process, enumerate(records)))

            _check_systemic(processed)

            accel_stats = {"candidates": 0, "accelerated": 0, "failed": 0}
            if "accelerate" in config.shared_stages:
                processed, accel_stats = accelerate_stage(
                    config, processed, processor.ffmpeg_tool, workers
                )
        final, selection_stats = _budget_select_stage(config, processed)
        histograms = _histograms(config, final)
        summary = summarize(
            config, final, gateway.request_counts(), selection_stats, accel_stats
        )
        _write_outputs(final, histograms, summary, out)
        return RunResult(records=final, summary=summary, histograms=histograms, out_dir=out)
    finally:
        gateway.close()


def _check_systemic(records: Sequence[VideoRecord]) -> None:
    if not records:
        return
    failed = sum(
        1
        for r in records
        if r.dropped and any(d.reason == PROVIDER_DROP_REASON for d in r.decisions)
    )
    if failed * 2 > len(records):
        raise SystemicProviderFailure(
            f"{failed} of {len(records)} records failed on provider errors; "
            "check sidecar health and score file coverage"
        )


def accelerate_stage(
    config: PipelineConfig,
    records: list[VideoRecord],
    ffmpeg_tool: FFmpegToolchain | None = None,
    workers: int = 1,
) -> tuple[list[VideoRecord], dict]:
    policy = config.acceleration
    plan = SamplePlan(max_frames=config.sampling.max_sampled_frames)
    candidate_idx = [
        i for i, r in enumerate(records) if accel.is_candidate(r, policy)
    ]
    stats = {"candidates": len(candidate_idx), "accelerated": 0, "failed": 0}
    if not candidate_idx:
        return records, stats

    def work(i: int) -> VideoRecord:
        return accel.accelerate_record(
            records[i],
            policy,
            plan,
            downscale_edge=config.sampling.downscale_edge,
            ffmpeg_tool=ffmpeg_tool,
        )

    with ThreadPoolExecutor(max_workers=workers) as pool:
        replaced = list(pool.map(work, candidate_idx))
    out = list(records)
    for i, new_record in zip(candidate_idx, replaced):
        out[i] = new_record
        if new_record.decisions and new_record.decisions[-1].reason == "accelerated":
            stats["accelerated"] += 1
        else:
            stats["failed"] += 1
    return out, stats


def _budget_select_stage(
    config: PipelineConfig, records: list[VideoRecord]
) -> tuple[list[VideoRecord], dict]:
    band = config.motion_band()
    items: list[SelectionItem] = []
    qualities: dict[str, float] = {}
    out = list(records)
    active_idx = [i for i, r in enumerate(out) if not r.dropped]
    for i in active_idx:
        record = out[i]
        try:
            quality = composite_quality(record.metrics, config.weights, band)
        except SelectionError as e:  # names the missing metric
            out[i] = record.with_decision(
                DecisionEntry("budget_select", "drop", "missing_metric", detail=str(e)),
                status="dropped",
            )
            continue
        cost = record.metrics.pixel_cost
        if cost is None:
            out[i] = record.with_decision(
                DecisionEntry("budget_select", "drop", "missing_metric", detail="pixel_cost"),
                status="dropped",
            )
            continue
        items.append(SelectionItem(record.id, quality, cost))
        qualities[record.id] = quality
    chosen = select_budget(items, config.budget)
    total_cost = 0
    total_quality = 0.0
    for i in active_idx:
        record = out[i]
        if record.dropped:
            continue
        q = qualities[record.id]
        if record.id in chosen:
            out[i] = record.with_decision(
                DecisionEntry("budget_select", "keep", "selected", value=q),
                status="kept",
            )
            total_cost += record.metrics.pixel_cost or 0
            total_quality += q
        else:
            out[i] = record.with_decision(
                DecisionEntry("budget_select", "drop", "not_selected", value=q),
                status="dropped",
            )
    stats = {
        "candidates": len(items),
        "selected": len(chosen),
        "budget": config.budget,
        "total_cost": total_cost,
        "total_quality": total_quality,
    }
    return out, stats


def _histograms(
    config: PipelineConfig, records: Sequence[VideoRecord]
) -> dict[str, Histogram]:
    out: dict[str, Histogram] = {}
    for metric in HISTOGRAM_METRICS:
        values = [
            v for r in records if (v := r.metrics.get(metric)) is not None
        ]
        out[metric] = compute_histogram(metric, values, config.histogram_bins)
    return out


def summarize(
    config: PipelineConfig,
    records: Sequence[VideoRecord],
    provider_requests: Mapping[str, Mapping[str, int]],
    selection_stats: Mapping | None = None,
    accel_stats: Mapping | None = None,
) -> dict:
    drops_by_stage: dict[str, int] = {}
    drops_by_reason: dict[str, int] = {}
    branch_counts = {"captioned": 0, "uncaptioned": 0}
    for record in records:
        for d in record.decisions:
            if d.stage == "route":
                branch_counts[d.reason] = branch_counts.get(d.reason, 0) + 1
            if d.action == "drop":
                drops_by_stage[d.stage] = drops_by_stage.get(d.stage, 0) + 1
                drops_by_reason[d.reason] = drops_by_reason.get(d.reason, 0) + 1
    kept = sum(1 for r in records if r.status == "kept")
    dropped = sum(1 for r in records if r.dropped)
    summary = {
        "input_records": len(records),
        "kept": kept,
        "dropped": dropped,
        "branch_counts": branch_counts,
        "drops_by_stage": drops_by_stage,
        "drops_by_reason": drops_by_reason,
        "provider_requests": {op: dict(src) for op, src in provider_requests.items()},
        "stages": {
            "captioned": list(config.captioned_stages),
            "uncaptioned": list(config.uncaptioned_stages),
            "shared": list(config.shared_stages),
        },
    }
    if selection_stats is not None:
        summary["selection"] = dict(selection_stats)
    if accel_stats is not None:
        summary["acceleration"] = dict(accel_stats)
    return summary


def _write_report(
    histograms: Mapping[str, Histogram], summary: Mapping, out_dir: Path
) -> None:
    hist_dir = out_dir / "histograms"
    hist_dir.mkdir(exist_ok=True)
    quantile_summary: dict[str, dict] = {}
    for metric, hist in histograms.items():
        (hist_dir / f"{metric}.csv").write_text(histogram_csv(hist), encoding="utf-8")
        quantile_summary[metric] = {"total": hist.total, "quantiles": hist.quantiles}
    full_summary = dict(summary)
    full_summary["histograms"] = quantile_summary
    (out_dir / "summary.json").write_text(
        json.dumps(full_summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _write_outputs(
    records: Sequence[VideoRecord],
    histograms: Mapping[str, Histogram],
    summary: Mapping,
    out_dir: Path,
) -> None:
    save_manifest([r for r in records if r.status == "kept"], out_dir / "curated.jsonl")
    save_manifest([r for r in records if r.dropped], out_dir / "dropped.jsonl")
    _write_report(histograms, summary, out_dir)


def emit_report(
    config: PipelineConfig, records: Sequence[VideoRecord], out_dir: str | Path
) -> dict:
    """Histograms and summary for an existing manifest (report subcommand)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    histograms = _histograms(config, records)
    summary = summarize(config, records, {})
    _write_report(histograms, summary, out)
    return summary


def probe_records(
    config: PipelineConfig, records: Sequence[VideoRecord], workers: int = 1
) -> list[VideoRecord]:
    """Probe every record; failures become dropped records (probe subcommand)."""
    process_gate.configure(config.media_tools.max_processes)
    gateway = ScorerGateway()
    try:
        with tempfile.TemporaryDirectory(prefix="vidcurate_frames_") as tmp:
            processor = RecordProcessor(config, gateway, Path(tmp))

            def work(indexed: tuple[int, VideoRecord]) -> VideoRecord:
                _, record = indexed
                if record.dropped:
                    return record
                ctx = _RecordContext(indexed[0], record)
                processor._probe(ctx)
                return ctx.record

            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(work, enumerate(records)))
    finally:
        gateway.close()


def compute_metrics(
    config: PipelineConfig,
    records: Sequence[VideoRecord],
    workers: int = 1,
    extra_score_files: Sequence[str] = (),
    extra_sidecars: Sequence[str] = (),
) -> list[VideoRecord]:
    """Probe and score all branch metrics without filtering (metrics subcommand)."""
    process_gate.configure(config.media_tools.max_processes)
    gateway = ScorerGateway(
        score_files=tuple(config.providers.score_files) + tuple(extra_score_files),
        sidecar_commands=tuple(config.providers.sidecars) + tuple(extra_sidecars),
        timeout_s=config.providers.timeout_s,
    )
    try:
        with tempfile.TemporaryDirectory(prefix="vidcurate_frames_") as tmp:
            processor = RecordProcessor(config, gateway, Path(tmp), apply_rules=False)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(processor.process, enumerate(records)))
    finally:
        gateway.close()


def apply_filters(
    config: PipelineConfig, records: Sequence[VideoRecord]
) -> list[VideoRecord]:
    """Apply each record's branch filter rules to already present metrics."""
    rules = config.rules()
    out: list[VideoRecord] = []
    for record in records:
        for stage in config.branch_stages(route(record) == "captioned"):
            if record.dropped:
                break
            if stage == "captioning":
                continue
            record = apply_rule(record, rules[stage], config.missing_metric_policy)
        out.append(record)
    return out


def run_selection(
    config: PipelineConfig, records: Sequence[VideoRecord]
) -> tuple[list[VideoRecord], dict]:
    """Budgeted selection over active records (select subcommand)."""
    return _budget_select_stage(config, list(records))
