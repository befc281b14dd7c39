"""Quality metrics computed over captions, frames, boxes and embeddings.

The motion score is computed in exact integer arithmetic end to end (integer
luma, integer area-overlap downscale, one rational division at the end) so
that analytically known fixtures produce bit-exact results instead of
float-approximate ones. ``motion_score`` is ``float(motion_score_exact())``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .media import Frame
from .model import MediaInfo


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, (x0, y0) top-left inclusive, (x1, y1) exclusive."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        for v in (self.x0, self.y0, self.x1, self.y1):
            if not math.isfinite(v):
                raise ValueError("box coordinates must be finite")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box ({self.x0}, {self.y0}, {self.x1}, {self.y1})")

    def clipped(self, width: float, height: float) -> "Box | None":
        x0, y0 = max(self.x0, 0.0), max(self.y0, 0.0)
        x1, y1 = min(self.x1, width), min(self.y1, height)
        if x0 >= x1 or y0 >= y1:
            return None
        return Box(x0, y0, x1, y1)


@dataclass(frozen=True)
class Embedding:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("embedding must be nonempty")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("embedding values must be finite")

    @property
    def dim(self) -> int:
        return len(self.values)

    @property
    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.values))


def char_repetition_ratio(text: str, n: int = 5) -> float:
    """Fraction of repeated character n-grams: 1 - distinct/total.

    Texts shorter than n characters score 0.0. Characters are Unicode code
    points, so the metric is alphabet-agnostic.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    total = len(text) - n + 1
    if total <= 0:
        return 0.0
    distinct = len({text[i : i + n] for i in range(total)})
    return 1.0 - distinct / total


def _overlap_matrix(out_bins: int, in_len: int) -> np.ndarray:
    """Integer overlap lengths between output bins and input pixels.

    Output bin r covers [r*in_len, (r+1)*in_len) and input pixel i covers
    [i*out_bins, (i+1)*out_bins) on a common grid scaled by out_bins*in_len,
    so every overlap length is an integer and area-average downscaling
    becomes two exact integer matrix products.
    """
    r = np.arange(out_bins, dtype=np.int64)
    i = np.arange(in_len, dtype=np.int64)
    lo = np.maximum(r[:, None] * in_len, i[None, :] * out_bins)
    hi = np.minimum((r[:, None] + 1) * in_len, (i[None, :] + 1) * out_bins)
    return np.maximum(hi - lo, 0)


def _luma_grid(frame: Frame) -> np.ndarray:
    rgb = np.frombuffer(frame.pixels, dtype=np.uint8).reshape(
        frame.height, frame.width, 3
    ).astype(np.int64)
    # Rec.601 luma scaled by 1000 to stay in integers
    return 299 * rgb[:, :, 0] + 587 * rgb[:, :, 1] + 114 * rgb[:, :, 2]


def motion_score_exact(frames: Sequence[Frame], downscale_edge: int = 64) -> Fraction:
    """Exact mean absolute luma change between consecutive sampled frames.

    Each frame is reduced to a downscale_edge x downscale_edge grid by exact
    area averaging, luma uses Rec.601 weights, and the per-pair mean |delta|
    is normalized by 255 so the score lies in [0, 1]. Fewer than two frames
    score 0. All frames must share one geometry.
    """
    if downscale_edge < 1:
        raise ValueError("downscale_edge must be >= 1")
    if len(frames) < 2:
        return Fraction(0)
    w, h = frames[0].width, frames[0].height
    for f in frames:
        if (f.width, f.height) != (w, h):
            raise ValueError(
                f"mismatched frame dimensions: {f.width}x{f.height} vs {w}x{h}"
            )
    oy = _overlap_matrix(downscale_edge, h)
    ox = _overlap_matrix(downscale_edge, w)
    # N[r, c] = sum over the cell's exact pixel coverage of Y1000, scaled by
    # the common grid factor; |delta N| sums stay well inside int64 for any
    # frame geometry up to 8K.
    grids = [oy @ _luma_grid(f) @ ox.T for f in frames]
    total = 0
    for a, b in zip(grids, grids[1:]):
        total += int(np.abs(b - a).sum())
    pairs = len(frames) - 1
    denom = 255 * 1000 * w * h * downscale_edge * downscale_edge * pairs
    return Fraction(total, denom)


def motion_score(frames: Sequence[Frame], downscale_edge: int = 64) -> float:
    return float(motion_score_exact(frames, downscale_edge))


def union_area(boxes: Sequence[Box], frame_width: float, frame_height: float) -> float:
    """Area of the union of boxes clipped to the frame, by coordinate compression."""
    clipped = [c for b in boxes if (c := b.clipped(frame_width, frame_height))]
    if not clipped:
        return 0.0
    xs = sorted({v for b in clipped for v in (b.x0, b.x1)})
    ys = sorted({v for b in clipped for v in (b.y0, b.y1)})
    area = 0.0
    for i in range(len(xs) - 1):
        x0, x1 = xs[i], xs[i + 1]
        strip = 0.0
        for j in range(len(ys) - 1):
            y0, y1 = ys[j], ys[j + 1]
            if any(b.x0 <= x0 and b.x1 >= x1 and b.y0 <= y0 and b.y1 >= y1 for b in clipped):
                strip += y1 - y0
        area += (x1 - x0) * strip
    return area


def ocr_area_ratio(
    boxes_per_frame: Sequence[Sequence[Box]], frame_width: float, frame_height: float
) -> float:
    """Mean fraction of frame area covered by detected text boxes.

    Overlapping boxes are not double counted. An empty frame list scores 0.
    """
    if frame_width <= 0 or frame_height <= 0:
        raise ValueError("frame dimensions must be positive")
    if not boxes_per_frame:
        return 0.0
    frame_area = frame_width * frame_height
    ratios = [union_area(boxes, frame_width, frame_height) / frame_area for boxes in boxes_per_frame]
    return sum(ratios) / len(ratios)


def cosine(a: Embedding, b: Embedding) -> float:
    if a.dim != b.dim:
        raise ValueError(f"embedding dims differ: {a.dim} vs {b.dim}")
    na, nb = a.norm, b.norm
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for zero-norm embedding")
    dot = sum(x * y for x, y in zip(a.values, b.values))
    # guard against float overshoot just past +/-1
    return max(-1.0, min(1.0, dot / (na * nb)))


def similarity_aggregate(
    frame_embeddings: Sequence[Embedding], text_embedding: Embedding
) -> float:
    """Mean cosine similarity between each frame embedding and the text."""
    if not frame_embeddings:
        raise ValueError("at least one frame embedding required")
    sims = [cosine(f, text_embedding) for f in frame_embeddings]
    return sum(sims) / len(sims)


def pixel_cost(
    media: MediaInfo,
    target_shape: tuple[int, int, int],
    mode: str = "target_shape",
) -> int:
    """Training pixel budget charge for one clip.

    target_shape is (frames, height, width). In target_shape mode a clip is
    charged as if resized to the target spatial shape, for at most the target
    frame count: min(num_frames, T) * H * W. In native mode the clip is
    charged at its own geometry: num_frames * width * height.
    """
    t, h, w = target_shape
    if t < 1 or h < 1 or w < 1:
        raise ValueError("target_shape entries must be >= 1")
    if mode == "target_shape":
        return min(media.num_frames, t) * h * w
    if mode == "native":
        return media.num_frames * media.width * media.height
    raise ValueError(f"unknown cost mode {mode!r}")


def boxes_from_payload(raw: Sequence[Sequence[Sequence[float]]]) -> list[list[Box]]:
    """Convert nested [x0, y0, x1, y1] lists (one list per frame) to Boxes."""
    return [[Box(*coords) for coords in frame_boxes] for frame_boxes in raw]


def embedding_from_payload(raw: Sequence[float]) -> Embedding:
    return Embedding(tuple(float(v) for v in raw))
