"""Routing of scoring requests to score files and scorer sidecars.

Wire protocol, NDJSON over stdin/stdout, UTF-8, one object per line:

* On start a sidecar emits an advertisement first:
  ``{"protocol": "scorer/1", "ops": [...], "concurrency": 1}``
* Each request is ``{"request_id", "op", "video_id", "payload"}``.
* Each response carries the same ``request_id`` and exactly one of
  ``result`` or ``error`` (``{"code", "message"}``).

Score files are NDJSON of ``{"video_id", "op", "value"}`` and take
precedence over sidecars: a request whose (video_id, op) appears in a score
file is answered locally and no sidecar traffic happens. Among sidecars, a
request goes to the first one (in configuration order) advertising the op.

A sidecar that dies is restarted once; if it dies again its requests fail
and the per-record error handling upstream takes over.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import shlex
import subprocess
import threading
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import ProtocolError, ProviderError

logger = logging.getLogger(__name__)

PROTOCOL = "scorer/1"

OPS = ("caption", "embed_text", "embed_frames", "aesthetic", "ocr_boxes")

HANDSHAKE_TIMEOUT_S = 30.0


def validate_result(op: str, value: Any, n_frames: int | None = None) -> Any:
    """Check a result value against its op's shape; returns it unchanged.

    n_frames, when known, pins per-frame result lengths (embed_frames,
    ocr_boxes). Score-file values are validated without it.
    """
    if op == "caption":
        if not isinstance(value, str) or not value:
            raise ProtocolError("caption result must be a nonempty string")
        return value
    if op == "embed_text":
        _check_vector(value, "embed_text result")
        return value
    if op == "embed_frames":
        if not isinstance(value, list) or not value:
            raise ProtocolError("embed_frames result must be a nonempty list of vectors")
        for vec in value:
            _check_vector(vec, "embed_frames vector")
        dims = {len(v) for v in value}
        if len(dims) != 1:
            raise ProtocolError(f"embed_frames vectors have mixed dims {sorted(dims)}")
        if n_frames is not None and len(value) != n_frames:
            raise ProtocolError(
                f"embed_frames returned {len(value)} vectors for {n_frames} frames"
            )
        return value
    if op == "aesthetic":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ProtocolError("aesthetic result must be a number")
        v = float(value)
        if not math.isfinite(v) or not (0.0 <= v <= 10.0):
            raise ProtocolError(f"aesthetic result {v} outside [0, 10]")
        return v
    if op == "ocr_boxes":
        if not isinstance(value, list):
            raise ProtocolError("ocr_boxes result must be a list (one entry per frame)")
        for frame_boxes in value:
            if not isinstance(frame_boxes, list):
                raise ProtocolError("ocr_boxes frame entry must be a list of boxes")
            for box in frame_boxes:
                if (
                    not isinstance(box, list)
                    or len(box) != 4
                    or any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in box)
                ):
                    raise ProtocolError(f"ocr box must be [x0, y0, x1, y1], got {box!r}")
                x0, y0, x1, y1 = (float(c) for c in box)
                if not (x0 < x1 and y0 < y1):
                    raise ProtocolError(f"degenerate ocr box {box!r}")
        if n_frames is not None and len(value) != n_frames:
            raise ProtocolError(
                f"ocr_boxes returned {len(value)} frame entries for {n_frames} frames"
            )
        return value
    raise ProtocolError(f"unknown op {op!r}")


def _check_vector(value: Any, what: str) -> None:
    if not isinstance(value, list) or not value:
        raise ProtocolError(f"{what} must be a nonempty list of numbers")
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ProtocolError(f"{what} contains a non-finite or non-numeric entry")


def load_score_file(path: str | Path) -> dict[tuple[str, str], Any]:
    """Parse one score file into a (video_id, op) -> value map."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ProtocolError(f"cannot read score file {path}: {e}") from e
    values: dict[tuple[str, str], Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"{path} line {lineno}: invalid JSON: {e.msg}") from e
        if not isinstance(obj, dict) or set(obj) != {"video_id", "op", "value"}:
            raise ProtocolError(
                f"{path} line {lineno}: expected exactly video_id, op and value keys"
            )
        vid, op = obj["video_id"], obj["op"]
        if not isinstance(vid, str) or not vid:
            raise ProtocolError(f"{path} line {lineno}: video_id must be a nonempty string")
        if op not in OPS:
            raise ProtocolError(f"{path} line {lineno}: unknown op {op!r}")
        key = (vid, op)
        if key in values:
            raise ProtocolError(f"{path} line {lineno}: duplicate entry for {key}")
        try:
            values[key] = validate_result(op, obj["value"])
        except ProtocolError as e:
            raise ProtocolError(f"{path} line {lineno}: {e}") from e
    return values


class _Pending:
    __slots__ = ("event", "result", "error")

    def __init__(self) -> None:
        self.event = threading.Event()
        self.result: Any = None
        self.error: ProviderError | None = None


class SidecarClient:
    """One spawned scorer process plus its reader thread."""

    def __init__(self, command: str, timeout_s: float = 120.0):
        self.command = command
        self.timeout_s = timeout_s
        self.ops: tuple[str, ...] = ()
        self.concurrency = 1
        self._proc: subprocess.Popen | None = None
        self._pending: dict[str, _Pending] = {}
        self._lock = threading.Lock()
        self._write_lock = threading.Lock()
        self._sem: threading.BoundedSemaphore | None = None
        self._dead = threading.Event()
        self._advert: dict | None = None
        self._advert_ready = threading.Event()
        self._advert_error: ProtocolError | None = None
        self._rid_counter = itertools.count(1)
        self._reader: threading.Thread | None = None

    def start(self) -> None:
        try:
            self._proc = subprocess.Popen(
                shlex.split(self.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as e:
            raise ProtocolError(f"cannot spawn sidecar {self.command!r}: {e}") from e
        self._reader = threading.Thread(
            target=self._read_loop, name=f"sidecar-reader-{id(self):x}", daemon=True
        )
        self._reader.start()
        if not self._advert_ready.wait(HANDSHAKE_TIMEOUT_S):
            self.close()
            raise ProtocolError(f"sidecar {self.command!r} sent no advertisement in time")
        if self._advert_error is not None:
            self.close()
            raise self._advert_error
        advert = self._advert or {}
        if advert.get("protocol") != PROTOCOL:
            self.close()
            raise ProtocolError(
                f"sidecar {self.command!r} speaks {advert.get('protocol')!r}, need {PROTOCOL!r}"
            )
        ops = advert.get("ops")
        if not isinstance(ops, list) or any(op not in OPS for op in ops):
            self.close()
            raise ProtocolError(f"sidecar {self.command!r} advertised invalid ops {ops!r}")
        conc = advert.get("concurrency", 1)
        if not isinstance(conc, int) or conc < 1:
            self.close()
            raise ProtocolError(f"sidecar {self.command!r} advertised bad concurrency {conc!r}")
        self.ops = tuple(ops)
        self.concurrency = conc
        self._sem = threading.BoundedSemaphore(conc)

    @property
    def alive(self) -> bool:
        return self._proc is not None and not self._dead.is_set()

    def request(self, op: str, video_id: str, payload: Mapping[str, Any]) -> Any:
        if not self.alive:
            raise ProviderError("sidecar_dead", f"sidecar {self.command!r} is not running")
        assert self._sem is not None
        with self._sem:
            rid = f"r{next(self._rid_counter)}"
            slot = _Pending()
            with self._lock:
                self._pending[rid] = slot
            line = json.dumps(
                {"request_id": rid, "op": op, "video_id": video_id, "payload": dict(payload)},
                ensure_ascii=False,
            )
            try:
                with self._write_lock:
                    assert self._proc is not None and self._proc.stdin is not None
                    self._proc.stdin.write(line + "\n")
                    self._proc.stdin.flush()
            except (OSError, ValueError) as e:
                with self._lock:
                    self._pending.pop(rid, None)
                self._dead.set()
                raise ProviderError("sidecar_exit", f"sidecar stdin closed: {e}") from e
            if not slot.event.wait(self.timeout_s):
                with self._lock:
                    self._pending.pop(rid, None)
                raise ProviderError(
                    "timeout", f"{op} for {video_id!r} got no response in {self.timeout_s:g}s"
                )
            if slot.error is not None:
                raise slot.error
            n_frames = len(payload["frames"]) if "frames" in payload else None
            return validate_result(op, slot.result, n_frames)

    def _read_loop(self) -> None:
        assert self._proc is not None and self._proc.stdout is not None
        stream = self._proc.stdout
        for line in stream:
            line = line.strip()
            if not line:
                continue
            if not self._advert_ready.is_set():
                try:
                    self._advert = json.loads(line)
                    if not isinstance(self._advert, dict):
                        raise ValueError("advertisement must be an object")
                except (json.JSONDecodeError, ValueError) as e:
                    self._advert_error = ProtocolError(
                        f"bad advertisement from {self.command!r}: {e}: {line!r}"
                    )
                self._advert_ready.set()
                if self._advert_error is not None:
                    break
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("response must be an object")
                rid = obj["request_id"]
            except (json.JSONDecodeError, ValueError, KeyError):
                logger.error("unparseable sidecar line, marking %r broken: %r", self.command, line)
                try:
                    self._proc.kill()
                except OSError:
                    pass
                break
            with self._lock:
                slot = self._pending.pop(rid, None)
            if slot is None:
                logger.warning("response for unknown request_id %r from %r", rid, self.command)
                continue
            if "error" in obj:
                err = obj["error"] if isinstance(obj["error"], dict) else {}
                code = err.get("code", "unspecified")
                slot.error = ProviderError(
                    str(code), f"sidecar error: {err.get('message', '')}"
                )
            elif "result" in obj:
                slot.result = obj["result"]
            else:
                slot.error = ProviderError(
                    "bad_result", "response carried neither result nor error"
                )
            slot.event.set()
        # EOF or protocol break: fail whatever is still waiting
        self._dead.set()
        self._advert_ready.set()
        with self._lock:
            pending, self._pending = self._pending, {}
        for slot in pending.values():
            slot.error = ProviderError("sidecar_exit", f"sidecar {self.command!r} exited")
            slot.event.set()

    def close(self) -> None:
        self._dead.set()
        proc = self._proc
        if proc is None:
            return
        try:
            if proc.stdin is not None:
                proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()


class ScorerGateway:
    """Serves scoring requests from score files first, then sidecars."""

    def __init__(
        self,
        score_files: Sequence[str | Path] = (),
        sidecar_commands: Sequence[str] = (),
        timeout_s: float = 120.0,
    ):
        self._scores: dict[tuple[str, str], Any] = {}
        for path in score_files:
            for key, value in load_score_file(path).items():
                # later files override earlier ones, mirroring CLI order
                self._scores[key] = value
        self._closed = False
        self._clients: list[SidecarClient] = []
        self._restarted: set[int] = set()
        self._restart_lock = threading.Lock()
        self._counts_lock = threading.Lock()
        self._counts: dict[str, dict[str, int]] = {
            op: {"score_file": 0, "sidecar": 0} for op in OPS
        }
        try:
            for cmd in sidecar_commands:
                client = SidecarClient(cmd, timeout_s=timeout_s)
                client.start()
                self._clients.append(client)
        except ProtocolError:
            self.close()
            raise

    def capabilities(self) -> set[str]:
        ops = {op for (_vid, op) in self._scores}
        for client in self._clients:
            ops.update(client.ops)
        return ops

    def covered_by_score_file(self, video_id: str, op: str) -> bool:
        return (video_id, op) in self._scores

    def needs_sidecar(self, video_id: str, op: str) -> bool:
        """True when serving this request would talk to a live sidecar."""
        if (video_id, op) in self._scores:
            return False
        return any(op in c.ops for c in self._clients)

    def request(self, op: str, video_id: str, payload: Mapping[str, Any]) -> Any:
        if self._closed:
            raise ProviderError("sidecar_dead", "gateway is closed")
        if op not in OPS:
            raise ProviderError("unroutable", f"unknown op {op!r}")
        key = (video_id, op)
        if key in self._scores:
            self._count(op, "score_file")
            return self._scores[key]
        for idx, client in enumerate(self._clients):
            if op not in client.ops:
                continue
            value = self._request_with_restart(idx, op, video_id, payload)
            self._count(op, "sidecar")
            return value
        raise ProviderError(
            "unroutable", f"no score file entry or sidecar serves {op} for {video_id!r}"
        )

    def _request_with_restart(
        self, idx: int, op: str, video_id: str, payload: Mapping[str, Any]
    ) -> Any:
        client = self._clients[idx]
        try:
            return client.request(op, video_id, payload)
        except ProviderError as e:
            if e.code not in ("sidecar_exit", "sidecar_dead"):
                raise
            with self._restart_lock:
                if self._clients[idx] is client:
                    if idx in self._restarted:
                        raise
                    logger.warning("sidecar %r died, restarting once", client.command)
                    self._restarted.add(idx)
                    fresh = SidecarClient(client.command, timeout_s=client.timeout_s)
                    try:
                        fresh.start()
                    except ProtocolError as pe:
                        raise ProviderError("sidecar_dead", f"restart failed: {pe}") from pe
                    self._clients[idx] = fresh
            # someone (possibly this thread) has swapped in a fresh client
            return self._clients[idx].request(op, video_id, payload)

    def _count(self, op: str, source: str) -> None:
        with self._counts_lock:
            self._counts[op][source] += 1

    def request_counts(self) -> dict[str, dict[str, int]]:
        with self._counts_lock:
            return {op: dict(sources) for op, sources in self._counts.items()}

    def close(self) -> None:
        self._closed = True
        for client in self._clients:
            client.close()

    def __enter__(self) -> "ScorerGateway":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
