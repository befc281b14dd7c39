"""Reading and writing JSONL video manifests.

One JSON object per line, LF separated, UTF-8. ``id`` and ``path`` are
required; ``caption`` and ``meta`` are optional on input. Output manifests
additionally carry ``caption_source``, ``media``, ``metrics``, ``decisions``
and ``status``, and those keys are accepted back on input so that written
manifests can be fed to later runs. Unknown keys are preserved verbatim.

Canonical key order on output: id, path, caption, caption_source, meta,
media, metrics, decisions, status, then unknown keys in first-seen order.
This makes write(parse(write(x))) == write(x) byte for byte.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import ManifestError
from .model import DecisionEntry, MediaInfo, MetricSet, VideoRecord

KNOWN_KEYS = (
    "id",
    "path",
    "caption",
    "caption_source",
    "meta",
    "media",
    "metrics",
    "decisions",
    "status",
)


def record_from_json_dict(obj: Mapping[str, Any]) -> VideoRecord:
    """Build a record from one decoded manifest object.

    Raises ValueError/KeyError/TypeError on bad shapes; parse_manifest wraps
    those with the line number.
    """
    if not isinstance(obj, Mapping):
        raise ValueError("manifest line must be a JSON object")
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise ValueError("'id' must be a nonempty string")
    path = obj.get("path")
    if not isinstance(path, str) or not path:
        raise ValueError("'path' must be a nonempty string")

    caption = obj.get("caption")
    if caption is not None and not isinstance(caption, str):
        raise ValueError("'caption' must be a string")
    if caption == "":
        caption = None  # empty caption counts as absent
    source = obj.get("caption_source")
    if caption is None:
        source = "none"
    elif source is None:
        source = "original"  # raw ingest manifests carry no source field
    elif source not in ("original", "generated"):
        raise ValueError(f"'caption_source' {source!r} invalid for a present caption")

    meta = obj.get("meta")
    if meta is not None and not isinstance(meta, Mapping):
        raise ValueError("'meta' must be an object")

    media = obj.get("media")
    media_info = MediaInfo.from_json_dict(media) if media is not None else None

    metrics = obj.get("metrics")
    metric_set = MetricSet.from_json_dict(metrics) if metrics is not None else MetricSet()

    decisions_raw = obj.get("decisions", [])
    if not isinstance(decisions_raw, list):
        raise ValueError("'decisions' must be a list")
    decisions = tuple(DecisionEntry.from_json_dict(d) for d in decisions_raw)

    status = obj.get("status", "pending")

    extra = {k: obj[k] for k in obj if k not in KNOWN_KEYS}
    return VideoRecord(
        id=rid,
        media_path=path,
        caption=caption,
        caption_source=source,
        meta=dict(meta) if meta is not None else None,
        media=media_info,
        metrics=metric_set,
        decisions=decisions,
        status=status,
        extra=extra,
    )


def record_to_json_dict(record: VideoRecord) -> dict[str, Any]:
    out: dict[str, Any] = {"id": record.id, "path": record.media_path}
    if record.caption is not None:
        out["caption"] = record.caption
        out["caption_source"] = record.caption_source
    if record.meta is not None:
        out["meta"] = dict(record.meta)
    if record.media is not None:
        out["media"] = record.media.to_json_dict()
    metrics = record.metrics.to_json_dict()
    if metrics:
        out["metrics"] = metrics
    if record.decisions:
        out["decisions"] = [d.to_json_dict() for d in record.decisions]
    out["status"] = record.status
    for k, v in record.extra.items():
        out[k] = v
    return out


def parse_manifest(text: str) -> list[VideoRecord]:
    """Parse JSONL manifest text; raises ManifestError naming the bad line."""
    records: list[VideoRecord] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"line {lineno}: invalid JSON: {e.msg}") from e
        try:
            record = record_from_json_dict(obj)
        except (ValueError, KeyError, TypeError) as e:
            raise ManifestError(f"line {lineno}: {e}") from e
        if record.id in seen:
            raise ManifestError(
                f"line {lineno}: duplicate id {record.id!r} (first seen on line {seen[record.id]})"
            )
        seen[record.id] = lineno
        records.append(record)
    return records


def write_manifest(records: Iterable[VideoRecord]) -> str:
    lines = [
        json.dumps(record_to_json_dict(r), ensure_ascii=False, separators=(",", ":"))
        for r in records
    ]
    return "".join(line + "\n" for line in lines)


def load_manifest(path: str | Path) -> list[VideoRecord]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    return parse_manifest(text)


def save_manifest(records: Iterable[VideoRecord], path: str | Path) -> None:
    Path(path).write_text(write_manifest(records), encoding="utf-8")
