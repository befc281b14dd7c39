from fractions import Fraction

import pytest

from vidcurate.accelerate import (
    AccelerationPolicy,
    accelerate_record,
    accelerated_path,
    is_candidate,
    rescore_plan,
    select_candidates,
)
from vidcurate.media import SamplePlan, probe
from vidcurate.model import DecisionEntry, MediaInfo, VideoRecord

from clipfile import make_gray_clip, ramp_values


def make_record(tmp_path, name="clip", motion=0.02, width=640, height=640,
                num_frames=64, fps=16.0, values=None):
    path = tmp_path / f"{name}.rawvid"
    make_gray_clip(path, values or [10] * num_frames, width=width, height=height, fps=fps)
    media = MediaInfo(width=width, height=height, fps=fps,
                      num_frames=num_frames, duration=num_frames / fps)
    rec = VideoRecord(id=name, media_path=str(path), media=media)
    if motion is not None:
        rec = rec.with_metric("motion_score", motion)
    return rec


class TestPolicy:
    def test_defaults(self):
        p = AccelerationPolicy()
        assert (p.motion_low, p.min_short_side, p.min_duration_s, p.speed_factor) == (
            0.05, 512, 4.0, 2.0,
        )
        assert p.replace is True

    def test_validation(self):
        with pytest.raises(ValueError):
            AccelerationPolicy(motion_low=1.5)
        with pytest.raises(ValueError):
            AccelerationPolicy(speed_factor=0.5)
        with pytest.raises(ValueError):
            AccelerationPolicy(min_duration_s=0.0)


class TestCandidacy:
    def policy(self):
        return AccelerationPolicy(motion_low=0.05, min_short_side=100, min_duration_s=2.0)

    def test_slow_sharp_long_clip_is_candidate(self, tmp_path):
        rec = make_record(tmp_path, motion=0.02, width=640, height=480)
        assert is_candidate(rec, self.policy())

    def test_fast_clip_is_not(self, tmp_path):
        rec = make_record(tmp_path, motion=0.30)
        assert not is_candidate(rec, self.policy())

    def test_motion_at_floor_is_not(self, tmp_path):
        rec = make_record(tmp_path, motion=0.05)
        assert not is_candidate(rec, self.policy())

    def test_blurry_small_clip_is_not(self, tmp_path):
        rec = make_record(tmp_path, motion=0.02, width=64, height=64)
        assert not is_candidate(rec, self.policy())

    def test_short_clip_is_not(self, tmp_path):
        rec = make_record(tmp_path, motion=0.02, num_frames=16, fps=16.0)  # 1s
        assert not is_candidate(rec, self.policy())

    def test_unscored_or_unprobed_is_not(self, tmp_path):
        rec = make_record(tmp_path, motion=None)
        assert not is_candidate(rec, self.policy())
        bare = VideoRecord(id="x", media_path="x.rawvid").with_metric("motion_score", 0.01)
        assert not is_candidate(bare, self.policy())

    def test_dropped_is_not(self, tmp_path):
        rec = make_record(tmp_path, motion=0.02)
        rec = rec.with_decision(DecisionEntry("motion", "drop", "below_min"), status="dropped")
        assert not is_candidate(rec, self.policy())

    def test_select_candidates_filters(self, tmp_path):
        slow = make_record(tmp_path, "slow", motion=0.02)
        fast = make_record(tmp_path, "fast", motion=0.5)
        assert [r.id for r in select_candidates([slow, fast], self.policy())] == ["slow"]


class TestPaths:
    def test_factor_marker(self):
        assert accelerated_path("clip.mp4", 2.0) == "clip.x2.mp4"
        assert accelerated_path("/data/a/clip.rawvid", 1.5) == "/data/a/clip.x1.5.rawvid"


class TestRescorePlan:
    def test_halves_interval_count(self):
        assert rescore_plan(SamplePlan(max_frames=16), 2.0).max_frames == 9
        assert rescore_plan(SamplePlan(max_frames=64), 2.0).max_frames == 33

    def test_floors_at_two(self):
        assert rescore_plan(SamplePlan(max_frames=2), 8.0).max_frames == 2

    def test_identity_factor(self):
        assert rescore_plan(SamplePlan(max_frames=16), 1.0).max_frames == 16


class TestAccelerateRecord:
    def test_low_motion_ramp_scores_higher_after_speedup(self, tmp_path):
        # 64 frames stepping 3 gray levels at 16fps: slow, smooth brightening
        values = ramp_values(0, 3, 64)
        rec = make_record(tmp_path, motion=None, width=64, height=64,
                          num_frames=64, fps=16.0, values=values)
        from vidcurate.media import sample_frames
        from vidcurate.metrics import motion_score

        plan = SamplePlan(max_frames=16)
        old = motion_score(sample_frames(rec.media_path, plan), 8)
        rec = rec.with_metric("motion_score", old)
        assert old == pytest.approx(float(Fraction(63 * 3, 15 * 255)))

        policy = AccelerationPolicy(min_short_side=32, speed_factor=2.0)
        out = accelerate_record(rec, policy, plan, downscale_edge=8)

        assert out.metrics.motion_score > old
        assert out.metrics.motion_score == pytest.approx(float(Fraction(63 * 3, 8 * 255)))
        assert out.media_path.endswith(".x2.rawvid")
        assert out.media.fps == 32.0
        assert out.media.duration == 2.0
        assert out.media.num_frames == 64
        last = out.decisions[-1]
        assert (last.stage, last.action, last.reason) == ("accelerate", "transform", "accelerated")
        assert "factor=2" in last.detail and "->" in last.detail

    def test_replace_false_keeps_original_path(self, tmp_path):
        rec = make_record(tmp_path, motion=0.01, width=64, height=64)
        policy = AccelerationPolicy(min_short_side=32, replace=False)
        out = accelerate_record(rec, policy, SamplePlan(max_frames=8))
        assert out.media_path == rec.media_path
        assert out.extra["accelerated_path"].endswith(".x2.rawvid")

    def test_media_failure_keeps_record(self, tmp_path):
        media = MediaInfo(width=640, height=640, fps=16.0, num_frames=64, duration=4.0)
        rec = VideoRecord(id="gone", media_path=str(tmp_path / "gone.rawvid"), media=media)
        rec = rec.with_metric("motion_score", 0.01)
        out = accelerate_record(rec, AccelerationPolicy(), SamplePlan(max_frames=8))
        assert out.status == "pending"
        assert out.media_path == rec.media_path
        assert out.metrics.motion_score == 0.01
        last = out.decisions[-1]
        assert (last.action, last.reason) == ("keep", "accel_failed")
        assert "missing_file" in last.detail

    def test_output_file_written_next_to_source(self, tmp_path):
        rec = make_record(tmp_path, motion=0.01, width=64, height=64)
        policy = AccelerationPolicy(min_short_side=32)
        out = accelerate_record(rec, policy, SamplePlan(max_frames=8))
        assert (tmp_path / "clip.x2.rawvid").exists()
        info = probe(out.media_path)
        assert info == out.media

    def test_accelerated_clip_no_longer_a_candidate(self, tmp_path):
        """One pass is enough: the sped-up clip fails the duration floor."""
        values = ramp_values(0, 3, 64)
        rec = make_record(tmp_path, motion=None, width=640, height=640,
                          num_frames=64, fps=16.0, values=values)
        from vidcurate.media import sample_frames
        from vidcurate.metrics import motion_score

        plan = SamplePlan(max_frames=16)
        rec = rec.with_metric("motion_score", motion_score(sample_frames(rec.media_path, plan), 8))
        policy = AccelerationPolicy(min_short_side=32, min_duration_s=3.0)
        assert is_candidate(rec, policy)
        out = accelerate_record(rec, policy, plan, downscale_edge=8)
        assert not is_candidate(out, policy)
