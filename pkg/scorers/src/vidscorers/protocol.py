"""Protocol host: one advertisement line, then one response line per request.

The host owns stdout. Nothing else in the process may print to it; logs go
to stderr. A scorer is any object with an ``ops`` tuple and a
``handle(op, video_id, payload)`` method returning a JSON-serializable
result or raising ScorerError.
"""

import json
import logging
import sys

from . import OPS, PROTOCOL

log = logging.getLogger(__name__)


class ScorerError(Exception):
    """Failure the scorer wants reported as a protocol error response."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _error(request_id, code, message):
    return {"request_id": request_id, "error": {"code": code, "message": message}}


def _parse_request(line: str):
    """(request, error_response): exactly one is None."""
    try:
        obj = json.loads(line)
    except ValueError:
        return None, _error(None, "bad_request", "unparseable request line")
    if not isinstance(obj, dict):
        return None, _error(None, "bad_request", "request must be a JSON object")
    rid = obj.get("request_id")
    if not isinstance(rid, str) or not rid:
        return None, _error(None, "bad_request", "missing request_id")
    op = obj.get("op")
    if not isinstance(op, str):
        return None, _error(rid, "bad_request", "missing op")
    video_id = obj.get("video_id")
    if not isinstance(video_id, str):
        return None, _error(rid, "bad_request", "missing video_id")
    payload = obj.get("payload")
    if payload is None:
        payload = {}
    if not isinstance(payload, dict):
        return None, _error(rid, "bad_request", "payload must be an object")
    return {"request_id": rid, "op": op, "video_id": video_id, "payload": payload}, None


def serve(scorer, stdin=None, stdout=None) -> int:
    """Answer requests until EOF on stdin; returns the process exit code."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout

    def emit(obj):
        stdout.write(json.dumps(obj) + "\n")
        stdout.flush()

    unknown = set(scorer.ops) - set(OPS)
    if unknown:
        raise ValueError(f"scorer advertises unknown ops {sorted(unknown)}")
    emit({"protocol": PROTOCOL, "ops": list(scorer.ops), "concurrency": 1})

    served = 0
    for line in stdin:
        if not line.strip():
            continue
        request, failure = _parse_request(line)
        if failure is not None:
            log.warning("rejected request line: %s", failure["error"]["message"])
            emit(failure)
            continue
        rid, op = request["request_id"], request["op"]
        if op not in scorer.ops:
            emit(_error(rid, "unsupported_op", f"op {op!r} not advertised"))
            continue
        try:
            result = scorer.handle(op, request["video_id"], request["payload"])
        except ScorerError as e:
            emit(_error(rid, e.code, str(e)))
            continue
        except Exception as e:  # noqa: BLE001 - a scorer bug must not kill the host
            log.exception("scorer failed on %s/%s", op, request["video_id"])
            emit(_error(rid, "internal_error", f"{type(e).__name__}: {e}"))
            continue
        emit({"request_id": rid, "result": result})
        served += 1
    log.info("eof on stdin after %d served requests", served)
    return 0
