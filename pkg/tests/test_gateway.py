import json
import textwrap
import threading
import time

import pytest

from vidcurate.errors import ProtocolError, ProviderError
from vidcurate.gateway import (
    OPS,
    ScorerGateway,
    SidecarClient,
    load_score_file,
    validate_result,
)

# Sidecar stand-ins are tiny scripts written to tmp_path and launched with
# python3. Each writes NDJSON to stdout and must flush per line.

ECHO_SCRIPT = """
import json, sys

LOG = sys.argv[1] if len(sys.argv) > 1 else None

def send(obj):
    sys.stdout.write(json.dumps(obj) + "\\n")
    sys.stdout.flush()

send({"protocol": "scorer/1",
      "ops": ["caption", "embed_text", "embed_frames", "aesthetic", "ocr_boxes"],
      "concurrency": 1})
for line in sys.stdin:
    req = json.loads(line)
    if LOG:
        with open(LOG, "a") as f:
            f.write(req["op"] + " " + req["video_id"] + "\\n")
    op, vid = req["op"], req["video_id"]
    frames = req["payload"].get("frames", [])
    if vid == "boom":
        send({"request_id": req["request_id"],
              "error": {"code": "remote_error", "message": "scoring failed"}})
        continue
    if vid == "empty-response":
        send({"request_id": req["request_id"]})
        continue
    if op == "caption":
        result = "a caption for " + vid
    elif op == "embed_text":
        result = [1.0, 0.0]
    elif op == "embed_frames":
        n = 3 if vid == "wrong-count" else len(frames)
        result = [[1.0, 0.0] for _ in range(n)]
    elif op == "aesthetic":
        result = 7.25
    else:
        result = [[[0, 0, 4, 4]] for _ in frames]
    send({"request_id": req["request_id"], "result": result})
"""


def write_script(tmp_path, name, body):
    path = tmp_path / name
    path.write_text(textwrap.dedent(body))
    return f"python3 {path}"


def write_scores(tmp_path, name, rows):
    path = tmp_path / name
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


class TestValidateResult:
    def test_caption(self):
        assert validate_result("caption", "a dog runs") == "a dog runs"
        with pytest.raises(ProtocolError):
            validate_result("caption", "")
        with pytest.raises(ProtocolError):
            validate_result("caption", 7)

    def test_embed_text(self):
        assert validate_result("embed_text", [0.5, -0.5]) == [0.5, -0.5]
        with pytest.raises(ProtocolError):
            validate_result("embed_text", [])
        with pytest.raises(ProtocolError):
            validate_result("embed_text", [0.5, float("nan")])
        with pytest.raises(ProtocolError):
            validate_result("embed_text", [0.5, True])

    def test_embed_frames(self):
        vecs = [[1.0, 0.0], [0.0, 1.0]]
        assert validate_result("embed_frames", vecs, n_frames=2) == vecs
        with pytest.raises(ProtocolError, match="mixed dims"):
            validate_result("embed_frames", [[1.0], [1.0, 2.0]])
        with pytest.raises(ProtocolError, match="2 vectors for 3 frames"):
            validate_result("embed_frames", vecs, n_frames=3)

    def test_aesthetic(self):
        assert validate_result("aesthetic", 5) == 5.0
        assert validate_result("aesthetic", 0.0) == 0.0
        assert validate_result("aesthetic", 10.0) == 10.0
        with pytest.raises(ProtocolError):
            validate_result("aesthetic", 10.5)
        with pytest.raises(ProtocolError):
            validate_result("aesthetic", -0.1)
        with pytest.raises(ProtocolError):
            validate_result("aesthetic", True)
        with pytest.raises(ProtocolError):
            validate_result("aesthetic", "nice")

    def test_ocr_boxes(self):
        boxes = [[[0, 0, 10, 10], [5.5, 5.5, 15.0, 15.0]], []]
        assert validate_result("ocr_boxes", boxes, n_frames=2) == boxes
        with pytest.raises(ProtocolError, match="degenerate"):
            validate_result("ocr_boxes", [[[10, 0, 0, 10]]])  # x1 < x0
        with pytest.raises(ProtocolError, match="degenerate"):
            validate_result("ocr_boxes", [[[0, 5, 10, 5]]])  # zero height
        with pytest.raises(ProtocolError):
            validate_result("ocr_boxes", [[[0, 0, 10]]])
        with pytest.raises(ProtocolError, match="1 frame entries for 2"):
            validate_result("ocr_boxes", [[]], n_frames=2)

    def test_unknown_op(self):
        with pytest.raises(ProtocolError):
            validate_result("transcribe", "x")


class TestScoreFiles:
    def test_load_round_trip(self, tmp_path):
        path = write_scores(tmp_path, "s.ndjson", [
            {"video_id": "v1", "op": "aesthetic", "value": 5.5},
            {"video_id": "v1", "op": "caption", "value": "two dogs"},
            {"video_id": "v2", "op": "aesthetic", "value": 9.0},
        ])
        scores = load_score_file(path)
        assert scores[("v1", "aesthetic")] == 5.5
        assert scores[("v1", "caption")] == "two dogs"
        assert len(scores) == 3

    def test_duplicate_key_rejected(self, tmp_path):
        path = write_scores(tmp_path, "s.ndjson", [
            {"video_id": "v1", "op": "aesthetic", "value": 5.5},
            {"video_id": "v1", "op": "aesthetic", "value": 6.5},
        ])
        with pytest.raises(ProtocolError, match="line 2.*duplicate"):
            load_score_file(path)

    def test_bad_json_names_line(self, tmp_path):
        path = tmp_path / "s.ndjson"
        path.write_text('{"video_id": "v1", "op": "aesthetic", "value": 5.5}\nnot json\n')
        with pytest.raises(ProtocolError, match="line 2"):
            load_score_file(path)

    def test_unknown_op_rejected(self, tmp_path):
        path = write_scores(tmp_path, "s.ndjson", [
            {"video_id": "v1", "op": "transcribe", "value": "x"},
        ])
        with pytest.raises(ProtocolError, match="unknown op"):
            load_score_file(path)

    def test_extra_keys_rejected(self, tmp_path):
        path = write_scores(tmp_path, "s.ndjson", [
            {"video_id": "v1", "op": "aesthetic", "value": 5.5, "note": "hi"},
        ])
        with pytest.raises(ProtocolError):
            load_score_file(path)

    def test_value_validated_at_load(self, tmp_path):
        path = write_scores(tmp_path, "s.ndjson", [
            {"video_id": "v1", "op": "aesthetic", "value": 99.0},
        ])
        with pytest.raises(ProtocolError, match="line 1"):
            load_score_file(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ProtocolError, match="cannot read"):
            load_score_file(tmp_path / "absent.ndjson")


class TestGatewayRouting:
    def test_score_file_precedence_no_sidecar_traffic(self, tmp_path):
        scores = write_scores(tmp_path, "s.ndjson", [
            {"video_id": "v1", "op": "aesthetic", "value": 5.5},
        ])
        log = tmp_path / "traffic.log"
        cmd = write_script(tmp_path, "echo.py", ECHO_SCRIPT) + f" {log}"
        with ScorerGateway([scores], [cmd]) as gw:
            assert gw.request("aesthetic", "v1", {}) == 5.5
            assert not log.exists()
            # a video absent from the file falls through to the sidecar
            assert gw.request("aesthetic", "v2", {}) == 7.25
        assert log.read_text() == "aesthetic v2\n"
        counts = gw.request_counts()
        assert counts["aesthetic"] == {"score_file": 1, "sidecar": 1}

    def test_later_score_file_overrides(self, tmp_path):
        first = write_scores(tmp_path, "a.ndjson", [
            {"video_id": "v1", "op": "aesthetic", "value": 2.0},
        ])
        second = write_scores(tmp_path, "b.ndjson", [
            {"video_id": "v1", "op": "aesthetic", "value": 8.0},
        ])
        with ScorerGateway([first, second]) as gw:
            assert gw.request("aesthetic", "v1", {}) == 8.0

    def test_unroutable_without_providers(self):
        with ScorerGateway() as gw:
            with pytest.raises(ProviderError) as exc:
                gw.request("caption", "v1", {})
            assert exc.value.code == "unroutable"

    def test_unknown_op_unroutable(self):
        with ScorerGateway() as gw:
            with pytest.raises(ProviderError) as exc:
                gw.request("transcribe", "v1", {})
            assert exc.value.code == "unroutable"

    def test_capabilities_and_coverage(self, tmp_path):
        scores = write_scores(tmp_path, "s.ndjson", [
            {"video_id": "v1", "op": "caption", "value": "hi there"},
        ])
        with ScorerGateway([scores]) as gw:
            assert gw.capabilities() == {"caption"}
            assert gw.covered_by_score_file("v1", "caption")
            assert not gw.covered_by_score_file("v2", "caption")
            assert not gw.needs_sidecar("v1", "caption")
            assert not gw.needs_sidecar("v2", "caption")  # nothing to talk to

    def test_needs_sidecar_true_when_uncovered(self, tmp_path):
        cmd = write_script(tmp_path, "echo.py", ECHO_SCRIPT)
        with ScorerGateway([], [cmd]) as gw:
            assert gw.needs_sidecar("v1", "caption")
            assert gw.capabilities() == set(OPS)

    def test_request_after_close(self, tmp_path):
        cmd = write_script(tmp_path, "echo.py", ECHO_SCRIPT)
        gw = ScorerGateway([], [cmd])
        gw.close()
        with pytest.raises(ProviderError) as exc:
            gw.request("caption", "v1", {})
        assert exc.value.code == "sidecar_dead"


class TestSidecarRequests:
    @pytest.fixture()
    def gateway(self, tmp_path):
        cmd = write_script(tmp_path, "echo.py", ECHO_SCRIPT)
        with ScorerGateway([], [cmd]) as gw:
            yield gw

    def test_all_ops_round_trip(self, gateway):
        assert gateway.request("caption", "v7", {}) == "a caption for v7"
        assert gateway.request("embed_text", "v7", {"text": "hi"}) == [1.0, 0.0]
        frames = {"frames": ["/tmp/a.png", "/tmp/b.png"]}
        assert gateway.request("embed_frames", "v7", frames) == [[1.0, 0.0], [1.0, 0.0]]
        assert gateway.request("aesthetic", "v7", frames) == 7.25
        assert gateway.request("ocr_boxes", "v7", frames) == [[[0, 0, 4, 4]], [[0, 0, 4, 4]]]

    def test_error_response_carries_code(self, gateway):
        with pytest.raises(ProviderError) as exc:
            gateway.request("aesthetic", "boom", {})
        assert exc.value.code == "remote_error"
        assert "scoring failed" in str(exc.value)

    def test_response_without_result_or_error(self, gateway):
        with pytest.raises(ProviderError) as exc:
            gateway.request("aesthetic", "empty-response", {})
        assert exc.value.code == "bad_result"

    def test_frame_count_mismatch_rejected(self, gateway):
        frames = {"frames": ["/tmp/a.png", "/tmp/b.png"]}
        with pytest.raises(ProtocolError, match="3 vectors for 2 frames"):
            gateway.request("embed_frames", "wrong-count", frames)

    def test_concurrent_requests_match_their_videos(self, gateway):
        results = {}
        errors = []

        def worker(k):
            try:
                results[k] = gateway.request("caption", f"vid{k}", {})
            except Exception as e:  # pragma: no cover - failure detail
                errors.append(e)

        threads = [threading.Thread(target=worker, args=(k,)) for k in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        assert results == {k: f"a caption for vid{k}" for k in range(8)}


class TestHandshake:
    def test_wrong_protocol(self, tmp_path):
        cmd = write_script(tmp_path, "bad.py", """
            import json, sys
            print(json.dumps({"protocol": "scorer/2", "ops": ["caption"]}), flush=True)
            sys.stdin.read()
        """)
        with pytest.raises(ProtocolError, match="scorer/2"):
            ScorerGateway([], [cmd])

    def test_garbage_advertisement_includes_raw_line(self, tmp_path):
        cmd = write_script(tmp_path, "bad.py", """
            import sys
            print("hello i am a scorer", flush=True)
            sys.stdin.read()
        """)
        with pytest.raises(ProtocolError, match="hello i am a scorer"):
            ScorerGateway([], [cmd])

    def test_invalid_ops(self, tmp_path):
        cmd = write_script(tmp_path, "bad.py", """
            import json, sys
            print(json.dumps({"protocol": "scorer/1", "ops": ["caption", "juggle"]}), flush=True)
            sys.stdin.read()
        """)
        with pytest.raises(ProtocolError, match="invalid ops"):
            ScorerGateway([], [cmd])

    def test_bad_concurrency(self, tmp_path):
        cmd = write_script(tmp_path, "bad.py", """
            import json, sys
            print(json.dumps({"protocol": "scorer/1", "ops": [], "concurrency": 0}), flush=True)
            sys.stdin.read()
        """)
        with pytest.raises(ProtocolError, match="concurrency"):
            ScorerGateway([], [cmd])

    def test_silence_times_out(self, tmp_path, monkeypatch):
        monkeypatch.setattr("vidcurate.gateway.HANDSHAKE_TIMEOUT_S", 0.5)
        cmd = write_script(tmp_path, "mute.py", """
            import sys
            sys.stdin.read()
        """)
        with pytest.raises(ProtocolError, match="no advertisement"):
            ScorerGateway([], [cmd])

    def test_blank_lines_before_advert_ignored(self, tmp_path):
        cmd = write_script(tmp_path, "spaced.py", """
            import json, sys
            print(flush=True)
            print(json.dumps({"protocol": "scorer/1", "ops": ["caption"]}), flush=True)
            for line in sys.stdin:
                req = json.loads(line)
                print(json.dumps({"request_id": req["request_id"], "result": "ok then"}),
                      flush=True)
        """)
        with ScorerGateway([], [cmd]) as gw:
            assert gw.request("caption", "v1", {}) == "ok then"

    def test_failed_handshake_closes_earlier_sidecars(self, tmp_path):
        log = tmp_path / "traffic.log"
        good = write_script(tmp_path, "echo.py", ECHO_SCRIPT) + f" {log}"
        bad = write_script(tmp_path, "bad.py", """
            import sys
            print("nope", flush=True)
            sys.stdin.read()
        """)
        with pytest.raises(ProtocolError):
            ScorerGateway([], [good, bad])
        # nothing left running that would answer; a fresh gateway still works
        with ScorerGateway([], [good]) as gw:
            assert gw.request("aesthetic", "v1", {}) == 7.25


class TestRestart:
    def test_dies_once_then_recovers(self, tmp_path):
        state = tmp_path / "spawns.txt"
        cmd = write_script(tmp_path, "flaky.py", f"""
            import json, sys
            with open({str(state)!r}, "a") as f:
                f.write("x")
            runs = len(open({str(state)!r}).read())
            print(json.dumps({{"protocol": "scorer/1", "ops": ["aesthetic"]}}), flush=True)
            if runs == 1:
                sys.exit(1)
            for line in sys.stdin:
                req = json.loads(line)
                print(json.dumps({{"request_id": req["request_id"], "result": 3.0}}), flush=True)
        """)
        with ScorerGateway([], [cmd]) as gw:
            assert gw.request("aesthetic", "v1", {}) == 3.0
        assert state.read_text() == "xx"

    def test_restarted_only_once(self, tmp_path):
        state = tmp_path / "spawns.txt"
        cmd = write_script(tmp_path, "dying.py", f"""
            import json, sys
            with open({str(state)!r}, "a") as f:
                f.write("x")
            print(json.dumps({{"protocol": "scorer/1", "ops": ["aesthetic"]}}), flush=True)
            sys.exit(1)
        """)
        with ScorerGateway([], [cmd]) as gw:
            with pytest.raises(ProviderError) as exc:
                gw.request("aesthetic", "v1", {})
            assert exc.value.code in ("sidecar_exit", "sidecar_dead")
            spawns_after_first = len(state.read_text())
            with pytest.raises(ProviderError):
                gw.request("aesthetic", "v2", {})
        assert spawns_after_first == 2
        assert len(state.read_text()) == 2  # no third spawn

    def test_garbage_response_kills_and_restart_serves(self, tmp_path):
        state = tmp_path / "spawns.txt"
        cmd = write_script(tmp_path, "confused.py", f"""
            import json, sys
            with open({str(state)!r}, "a") as f:
                f.write("x")
            runs = len(open({str(state)!r}).read())
            print(json.dumps({{"protocol": "scorer/1", "ops": ["aesthetic"]}}), flush=True)
            for line in sys.stdin:
                req = json.loads(line)
                if runs == 1:
                    print(";;; not a response ;;;", flush=True)
                    sys.exit(0)
                print(json.dumps({{"request_id": req["request_id"], "result": 4.5}}), flush=True)
        """)
        with ScorerGateway([], [cmd]) as gw:
            assert gw.request("aesthetic", "v1", {}) == 4.5
        assert state.read_text() == "xx"


class TestTimeoutsAndConcurrency:
    def test_request_timeout(self, tmp_path):
        cmd = write_script(tmp_path, "slow.py", """
            import json, sys
            print(json.dumps({"protocol": "scorer/1", "ops": ["caption"]}), flush=True)
            for line in sys.stdin:
                pass
        """)
        with ScorerGateway([], [cmd], timeout_s=0.3) as gw:
            with pytest.raises(ProviderError) as exc:
                gw.request("caption", "v1", {})
            assert exc.value.code == "timeout"

    def test_concurrency_one_serializes(self, tmp_path):
        cmd = write_script(tmp_path, "sleepy.py", """
            import json, sys, time
            print(json.dumps({"protocol": "scorer/1", "ops": ["aesthetic"],
                              "concurrency": 1}), flush=True)
            for line in sys.stdin:
                req = json.loads(line)
                time.sleep(0.15)
                print(json.dumps({"request_id": req["request_id"], "result": 1.0}), flush=True)
        """)
        with ScorerGateway([], [cmd]) as gw:
            start = time.monotonic()
            threads = [
                threading.Thread(target=gw.request, args=("aesthetic", f"v{k}", {}))
                for k in range(2)
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            elapsed = time.monotonic() - start
        assert elapsed >= 0.28  # two requests cannot overlap at concurrency 1


class TestSidecarClientDirect:
    def test_ops_and_concurrency_exposed(self, tmp_path):
        cmd = write_script(tmp_path, "echo.py", ECHO_SCRIPT)
        client = SidecarClient(cmd)
        client.start()
        try:
            assert client.ops == OPS
            assert client.concurrency == 1
            assert client.alive
        finally:
            client.close()
        assert not client.alive
