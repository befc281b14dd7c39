"""Deterministic stub scorer: stdlib only, same input -> same bytes out.

Every value is derived from SHA-256 of the request content (text or frame
file bytes), never from paths, clocks, or process state, so golden-file
sessions stay byte-exact across machines. The stub exists for protocol and
pipeline integration tests; its scores mean nothing.
"""

import hashlib
import math
from pathlib import Path

from . import OPS
from .protocol import ScorerError

EMBED_DIM = 16


def _digest(tag: str, data: bytes) -> bytes:
    return hashlib.sha256(tag.encode() + b"\x00" + data).digest()


def unit_vector(seed: bytes) -> list[float]:
    """Deterministic unit vector; components expanded from seed in counter mode."""
    comps = []
    for k in range(EMBED_DIM):
        block = hashlib.sha256(seed + k.to_bytes(2, "big")).digest()
        u = int.from_bytes(block[:8], "big") / 2**64
        comps.append(2.0 * u - 1.0)
    norm = math.sqrt(sum(c * c for c in comps))
    return [c / norm for c in comps]


class StubScorer:
    ops = OPS

    def handle(self, op, video_id, payload):
        if op == "caption":
            return f"stub caption for {video_id}"
        if op == "embed_text":
            text = payload.get("text")
            if not isinstance(text, str):
                raise ScorerError("bad_request", "payload.text must be a string")
            return unit_vector(_digest("text", text.encode()))
        contents = self._frame_contents(payload)
        if op == "embed_frames":
            return [unit_vector(_digest("frame", c)) for c in contents]
        if op == "aesthetic":
            pooled = _digest("aesthetic", b"".join(_digest("frame", c) for c in contents))
            return int.from_bytes(pooled[:8], "big") % 1001 / 100
        if op == "ocr_boxes":
            return [self._frame_boxes(c) for c in contents]
        raise ScorerError("unsupported_op", f"op {op!r} not implemented")

    def _frame_contents(self, payload):
        frames = payload.get("frames")
        if not isinstance(frames, list) or not frames:
            raise ScorerError("bad_request", "payload.frames must be a nonempty list")
        contents = []
        for path in frames:
            try:
                contents.append(Path(path).read_bytes())
            except OSError as e:
                raise ScorerError("unreadable_frame", f"{path}: {e}") from e
        return contents

    def _frame_boxes(self, content):
        d = _digest("ocr", content)
        boxes = []
        for j in range(d[0] % 3):
            b = hashlib.sha256(d + bytes([j])).digest()
            x0, y0 = b[0] % 160, b[1] % 120
            boxes.append([x0, y0, x0 + 1 + b[2] % 48, y0 + 1 + b[3] % 32])
        return boxes
