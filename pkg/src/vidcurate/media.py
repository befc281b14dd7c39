"""Media probing, frame sampling and speed re-encoding.

Two interchangeable toolchains sit behind the same three operations:

* :class:`FFmpegToolchain` shells out to ffprobe/ffmpeg for real codecs.
* :class:`RawVideoToolchain` handles ``.rawvid`` files, a trivial lossless
  container (one JSON header line plus raw RGB24 frames) that makes every
  pixel reproducible without a codec. Tests and fixtures use it so results
  are exact on any machine, including CI hosts without ffmpeg.

External process concurrency is capped by a module-level gate so a large
worker pool cannot fork an unbounded number of encoders.
"""

from __future__ import annotations

import json
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import MediaError
from .model import MediaInfo

RAWVID_MAGIC = b"RAWVID1 "


@dataclass(frozen=True)
class Frame:
    """One decoded frame, RGB24 row-major."""

    width: int
    height: int
    pixels: bytes
    timestamp: float

    def __post_init__(self) -> None:
        if len(self.pixels) != self.width * self.height * 3:
            raise ValueError(
                f"pixel buffer is {len(self.pixels)} bytes, expected {self.width * self.height * 3}"
            )


@dataclass(frozen=True)
class SamplePlan:
    """How many frames to pull from a clip."""

    max_frames: int
    strategy: str = "uniform"

    def __post_init__(self) -> None:
        if self.max_frames < 1:
            raise ValueError("max_frames must be >= 1")
        if self.strategy != "uniform":
            raise ValueError(f"unknown sampling strategy {self.strategy!r}")


def sample_indices(num_frames: int, max_frames: int) -> list[int]:
    """Uniformly spaced frame indices, always including first and last.

    With n = min(num_frames, max_frames), index k maps to
    round(k * (num_frames - 1) / (n - 1)); a single sample takes frame 0.
    """
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    if max_frames < 1:
        raise ValueError("max_frames must be >= 1")
    n = min(num_frames, max_frames)
    if n == 1:
        return [0]
    return [round(k * (num_frames - 1) / (n - 1)) for k in range(n)]


class _ProcessGate:
    """Bounded gate on concurrently running external processes."""

    def __init__(self, limit: int = 4):
        self._lock = threading.Lock()
        self._limit = limit
        self._sem = threading.BoundedSemaphore(limit)

    def configure(self, limit: int) -> None:
        if limit < 1:
            raise ValueError("process cap must be >= 1")
        with self._lock:
            if limit != self._limit:
                self._limit = limit
                self._sem = threading.BoundedSemaphore(limit)

    @property
    def limit(self) -> int:
        return self._limit

    def __enter__(self) -> "_ProcessGate":
        self._sem.acquire()
        return self

    def __exit__(self, *exc) -> None:
        self._sem.release()


process_gate = _ProcessGate()


def _require_file(media_path: str | Path) -> Path:
    p = Path(media_path)
    if not p.is_file():
        raise MediaError("missing_file", f"no such media file: {p}")
    return p


class RawVideoToolchain:
    """Lossless toolchain for ``.rawvid`` files.

    Layout: ``RAWVID1 `` + one-line JSON header with width, height, fps and
    num_frames, then num_frames frames of width*height*3 RGB24 bytes.
    """

    def probe(self, media_path: str | Path) -> MediaInfo:
        p = _require_file(media_path)
        header = self._read_header(p)
        if header["num_frames"] == 0:
            raise MediaError("zero_frames", f"{p} declares zero frames")
        try:
            return MediaInfo(
                width=header["width"],
                height=header["height"],
                num_frames=header["num_frames"],
                fps=float(header["fps"]),
                duration=header["num_frames"] / float(header["fps"]),
            )
        except (ValueError, TypeError, KeyError, ZeroDivisionError) as e:
            raise MediaError("undecodable", f"{p}: bad header: {e}") from e

    def sample_frames(
        self, media_path: str | Path, plan: SamplePlan, info: MediaInfo | None = None
    ) -> list[Frame]:
        p = _require_file(media_path)
        if info is None:
            info = self.probe(p)
        indices = sample_indices(info.num_frames, plan.max_frames)
        frame_bytes = info.width * info.height * 3
        frames: list[Frame] = []
        with p.open("rb") as f:
            header_len = len(f.readline())
            for idx in indices:
                f.seek(header_len + idx * frame_bytes)
                buf = f.read(frame_bytes)
                if len(buf) != frame_bytes:
                    last_good = indices[len(frames) - 1] if frames else None
                    raise MediaError(
                        "decode_failure",
                        f"{p}: truncated at frame {idx} (last good sampled index: {last_good})",
                    )
                frames.append(
                    Frame(info.width, info.height, buf, timestamp=idx / info.fps)
                )
        return frames

    def reencode_speedup(
        self, media_path: str | Path, out_path: str | Path, speed_factor: float
    ) -> MediaInfo:
        if speed_factor < 1.0:
            raise ValueError("speed_factor must be >= 1.0")
        p = _require_file(media_path)
        header = self._read_header(p)
        header["fps"] = float(header["fps"]) * speed_factor
        out = Path(out_path)
        try:
            with p.open("rb") as src, out.open("wb") as dst:
                src.readline()
                dst.write(RAWVID_MAGIC + json.dumps(header).encode("ascii") + b"\n")
                while chunk := src.read(1 << 20):
                    dst.write(chunk)
        except OSError as e:
            raise MediaError("unwritable", f"cannot write {out}: {e}") from e
        return self.probe(out)

    def _read_header(self, p: Path) -> dict:
        with p.open("rb") as f:
            line = f.readline()
        if not line.startswith(RAWVID_MAGIC):
            raise MediaError("undecodable", f"{p} is not a rawvid file")
        try:
            header = json.loads(line[len(RAWVID_MAGIC):])
        except json.JSONDecodeError as e:
            raise MediaError("undecodable", f"{p}: bad rawvid header: {e}") from e
        if not isinstance(header, dict) or not {"width", "height", "fps", "num_frames"} <= set(header):
            raise MediaError("undecodable", f"{p}: rawvid header missing fields")
        return header


def write_rawvid(
    path: str | Path, frames: Sequence[bytes], width: int, height: int, fps: float
) -> None:
    """Write a ``.rawvid`` file from raw RGB24 frame buffers."""
    if not frames:
        raise ValueError("at least one frame required")
    frame_bytes = width * height * 3
    for i, buf in enumerate(frames):
        if len(buf) != frame_bytes:
            raise ValueError(f"frame {i} is {len(buf)} bytes, expected {frame_bytes}")
    header = {"width": width, "height": height, "fps": fps, "num_frames": len(frames)}
    with Path(path).open("wb") as f:
        f.write(RAWVID_MAGIC + json.dumps(header).encode("ascii") + b"\n")
        for buf in frames:
            f.write(buf)


class FFmpegToolchain:
    """Toolchain backed by the ffmpeg/ffprobe executables."""

    def __init__(
        self,
        ffmpeg: str = "ffmpeg",
        ffprobe: str = "ffprobe",
        codec: str = "libx264",
    ):
        self.ffmpeg = ffmpeg
        self.ffprobe = ffprobe
        self.codec = codec

    # Command builders are separate from execution so tests can pin the
    # exact argv without spawning anything.
    def probe_command(self, media_path: str) -> list[str]:
        return [
            self.ffprobe,
            "-v", "error",
            "-select_streams", "v:0",
            "-count_frames",
            "-show_entries",
            "stream=width,height,avg_frame_rate,r_frame_rate,nb_read_frames,duration",
            "-show_entries", "format=duration",
            "-print_format", "json",
            media_path,
        ]

    def decode_command(self, media_path: str, indices: Sequence[int]) -> list[str]:
        select = "+".join(f"eq(n\\,{i})" for i in indices)
        return [
            self.ffmpeg,
            "-nostdin", "-hide_banner", "-loglevel", "error",
            "-i", media_path,
            "-vf", f"select={select}",
            "-vsync", "0",
            "-f", "rawvideo",
            "-pix_fmt", "rgb24",
            "pipe:1",
        ]

    def reencode_command(
        self, media_path: str, out_path: str, speed_factor: float, out_fps: float
    ) -> list[str]:
        return [
            self.ffmpeg,
            "-nostdin", "-hide_banner", "-loglevel", "error", "-y",
            "-i", media_path,
            "-vf", f"setpts=PTS/{speed_factor:g}",
            "-r", f"{out_fps:g}",
            "-an",
            "-c:v", self.codec,
            out_path,
        ]

    def probe(self, media_path: str | Path) -> MediaInfo:
        p = _require_file(media_path)
        with process_gate:
            proc = subprocess.run(
                self.probe_command(str(p)), capture_output=True, text=True
            )
        if proc.returncode != 0:
            raise MediaError("undecodable", f"ffprobe failed on {p}: {proc.stderr.strip()}")
        try:
            payload = json.loads(proc.stdout)
            stream = payload["streams"][0]
        except (json.JSONDecodeError, KeyError, IndexError) as e:
            raise MediaError("undecodable", f"{p}: no decodable video stream") from e
        fps = _parse_rate(stream.get("avg_frame_rate")) or _parse_rate(
            stream.get("r_frame_rate")
        )
        if not fps:
            raise MediaError("undecodable", f"{p}: no usable frame rate")
        num_frames = int(stream.get("nb_read_frames", 0) or 0)
        if num_frames == 0:
            raise MediaError("zero_frames", f"{p} contains no video frames")
        duration = stream.get("duration") or payload.get("format", {}).get("duration")
        duration = float(duration) if duration else num_frames / fps
        try:
            return MediaInfo(
                width=int(stream["width"]),
                height=int(stream["height"]),
                num_frames=num_frames,
                fps=fps,
                duration=duration,
            )
        except (ValueError, KeyError) as e:
            raise MediaError("undecodable", f"{p}: inconsistent stream metadata: {e}") from e

    def sample_frames(
        self, media_path: str | Path, plan: SamplePlan, info: MediaInfo | None = None
    ) -> list[Frame]:
        p = _require_file(media_path)
        if info is None:
            info = self.probe(p)
        indices = sample_indices(info.num_frames, plan.max_frames)
        with process_gate:
            proc = subprocess.run(self.decode_command(str(p), indices), capture_output=True)
        if proc.returncode != 0:
            raise MediaError(
                "decode_failure", f"ffmpeg decode failed on {p}: {proc.stderr.decode().strip()}"
            )
        frame_bytes = info.width * info.height * 3
        raw = proc.stdout
        got = len(raw) // frame_bytes
        if got != len(indices) or len(raw) % frame_bytes:
            last_good = indices[got - 1] if got else None
            raise MediaError(
                "decode_failure",
                f"{p}: expected {len(indices)} frames, decoded {got} "
                f"(last good sampled index: {last_good})",
            )
        return [
            Frame(
                info.width,
                info.height,
                raw[k * frame_bytes : (k + 1) * frame_bytes],
                timestamp=idx / info.fps,
            )
            for k, idx in enumerate(indices)
        ]

    def reencode_speedup(
        self, media_path: str | Path, out_path: str | Path, speed_factor: float
    ) -> MediaInfo:
        if speed_factor < 1.0:
            raise ValueError("speed_factor must be >= 1.0")
        p = _require_file(media_path)
        info = self.probe(p)
        out = Path(out_path)
        if not out.parent.is_dir():
            raise MediaError("unwritable", f"output directory does not exist: {out.parent}")
        cmd = self.reencode_command(str(p), str(out), speed_factor, info.fps * speed_factor)
        with process_gate:
            proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            raise MediaError("encode_failure", f"ffmpeg re-encode failed: {proc.stderr.strip()}")
        return self.probe(out)


def _parse_rate(rate: str | None) -> float | None:
    if not rate or rate == "0/0":
        return None
    if "/" in rate:
        num, den = rate.split("/", 1)
        if float(den) == 0:
            return None
        return float(num) / float(den)
    return float(rate)


def toolchain_for(
    media_path: str | Path, ffmpeg_tool: FFmpegToolchain | None = None
) -> RawVideoToolchain | FFmpegToolchain:
    """Pick a toolchain by file extension (.rawvid is handled natively)."""
    if str(media_path).endswith(".rawvid"):
        return RawVideoToolchain()
    return ffmpeg_tool if ffmpeg_tool is not None else FFmpegToolchain()


def probe(media_path: str | Path, ffmpeg_tool: FFmpegToolchain | None = None) -> MediaInfo:
    return toolchain_for(media_path, ffmpeg_tool).probe(media_path)


def sample_frames(
    media_path: str | Path,
    plan: SamplePlan,
    info: MediaInfo | None = None,
    ffmpeg_tool: FFmpegToolchain | None = None,
) -> list[Frame]:
    return toolchain_for(media_path, ffmpeg_tool).sample_frames(media_path, plan, info)


def reencode_speedup(
    media_path: str | Path,
    out_path: str | Path,
    speed_factor: float,
    ffmpeg_tool: FFmpegToolchain | None = None,
) -> MediaInfo:
    return toolchain_for(media_path, ffmpeg_tool).reencode_speedup(
        media_path, out_path, speed_factor
    )
