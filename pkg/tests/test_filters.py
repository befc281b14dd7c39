import random

import pytest

from vidcurate.filters import FilterRule, apply_chain, apply_rule, metric_value
from vidcurate.model import MediaInfo, VideoRecord


def make_record(rid="v", **metrics):
    media = metrics.pop("media", None)
    rec = VideoRecord(id=rid, media_path=f"{rid}.rawvid", media=media)
    for name, value in metrics.items():
        rec = rec.with_metric(name, value)
    return rec


class TestRuleValidation:
    def test_needs_some_bound(self):
        with pytest.raises(ValueError):
            FilterRule(stage="x", metric="aesthetic")

    def test_bounds_ordered(self):
        with pytest.raises(ValueError):
            FilterRule(stage="x", metric="motion_score", lo=0.7, hi=0.05)

    def test_unknown_metric(self):
        with pytest.raises(ValueError):
            FilterRule(stage="x", metric="vibes", lo=0.0)

    def test_bounds_within_declared_range(self):
        with pytest.raises(ValueError):
            FilterRule(stage="x", metric="aesthetic", hi=11.0)
        FilterRule(stage="x", metric="aesthetic", lo=0.0, hi=10.0)  # ok


class TestMetricValue:
    def test_plain_metric(self):
        rec = make_record(aesthetic=5.5)
        assert metric_value(rec, "aesthetic") == 5.5

    def test_resolution_is_short_side(self):
        media = MediaInfo(width=1920, height=1080, fps=30.0, num_frames=30, duration=1.0)
        rec = make_record(media=media)
        assert metric_value(rec, "resolution") == 1080.0

    def test_missing(self):
        assert metric_value(make_record(), "aesthetic") is None
        assert metric_value(make_record(), "resolution") is None


class TestApplyRule:
    def test_repetitive_caption_dropped(self):
        # 0.8333 vs max 0.3
        rule = FilterRule(stage="char_repetition", metric="char_repetition", hi=0.3)
        rec = apply_rule(make_record(char_repetition=0.8333), rule)
        assert rec.status == "dropped"
        last = rec.decisions[-1]
        assert last.action == "drop"
        assert last.reason == "above_max"
        assert "0.8333" in last.detail and "0.3" in last.detail
        assert last.value == 0.8333

    def test_below_min(self):
        rule = FilterRule(stage="aesthetic", metric="aesthetic", lo=4.0)
        rec = apply_rule(make_record(aesthetic=3.2), rule)
        assert rec.status == "dropped"
        assert rec.decisions[-1].reason == "below_min"

    def test_bounds_inclusive(self):
        rule = FilterRule(stage="motion", metric="motion_score", lo=0.05, hi=0.7)
        for v in (0.05, 0.7):
            rec = apply_rule(make_record(motion_score=v), rule)
            assert rec.status == "pending"
            assert rec.decisions[-1].action == "keep"
            assert rec.decisions[-1].reason == "within_bounds"

    def test_missing_metric_drop_policy(self):
        rule = FilterRule(stage="aesthetic", metric="aesthetic", lo=4.0)
        rec = apply_rule(make_record(), rule, missing_policy="drop")
        assert rec.status == "dropped"
        assert rec.decisions[-1].reason == "missing_metric"
        assert rec.decisions[-1].value is None

    def test_missing_metric_keep_policy(self):
        rule = FilterRule(stage="aesthetic", metric="aesthetic", lo=4.0)
        rec = apply_rule(make_record(), rule, missing_policy="keep")
        assert rec.status == "pending"
        assert rec.decisions[-1].reason == "missing_metric_skipped"

    def test_bad_policy(self):
        rule = FilterRule(stage="aesthetic", metric="aesthetic", lo=4.0)
        with pytest.raises(ValueError):
            apply_rule(make_record(aesthetic=5.0), rule, missing_policy="maybe")


class TestApplyChain:
    def chain(self):
        return [
            FilterRule(stage="char_repetition", metric="char_repetition", hi=0.3),
            FilterRule(stage="aesthetic", metric="aesthetic", lo=4.0),
            FilterRule(stage="motion", metric="motion_score", lo=0.05, hi=0.7),
        ]

    def test_first_failing_stage_wins(self):
        rec = make_record(char_repetition=0.9, aesthetic=1.0, motion_score=0.9)
        out, = apply_chain([rec], self.chain())
        assert out.status == "dropped"
        drops = [d for d in out.decisions if d.action == "drop"]
        assert len(drops) == 1
        assert drops[0].stage == "char_repetition"

    def test_later_stages_not_evaluated_after_drop(self):
        rec = make_record(char_repetition=0.9)  # aesthetic missing; must not matter
        out, = apply_chain([rec], self.chain())
        assert [d.stage for d in out.decisions] == ["char_repetition"]

    def test_survivor_records_every_stage(self):
        rec = make_record(char_repetition=0.1, aesthetic=6.0, motion_score=0.3)
        out, = apply_chain([rec], self.chain())
        assert out.status == "pending"
        assert [d.stage for d in out.decisions] == ["char_repetition", "aesthetic", "motion"]
        assert all(d.action == "keep" for d in out.decisions)

    def test_dropped_input_passes_through(self):
        from vidcurate.model import DecisionEntry

        rec = make_record(char_repetition=0.1)
        rec = rec.with_decision(DecisionEntry("routing", "drop", "bad"), status="dropped")
        out, = apply_chain([rec], self.chain())
        assert out is rec

    def test_order_preserved(self):
        recs = [make_record(rid=f"r{i}", char_repetition=0.1 * i) for i in range(6)]
        out = apply_chain(recs, self.chain())
        assert [r.id for r in out] == [r.id for r in recs]


class TestMonotonicity:
    """Tightening any threshold can only shrink the kept set."""

    def sample_records(self, rng, n=120):
        recs = []
        for i in range(n):
            recs.append(
                make_record(
                    rid=f"r{i:03d}",
                    char_repetition=rng.random(),
                    aesthetic=rng.uniform(0, 10),
                    motion_score=rng.random(),
                )
            )
        return recs

    def kept_ids(self, records, rules):
        return {r.id for r in apply_chain(records, rules) if r.status == "pending"}

    def test_tightening_shrinks_kept_set(self):
        rng = random.Random(11)
        records = self.sample_records(rng)
        for _ in range(40):
            hi = rng.random()
            lo_a = rng.uniform(0, 10)
            rules = [
                FilterRule(stage="char_repetition", metric="char_repetition", hi=hi),
                FilterRule(stage="aesthetic", metric="aesthetic", lo=lo_a),
            ]
            tighter = [
                FilterRule(stage="char_repetition", metric="char_repetition", hi=hi * 0.8),
                FilterRule(stage="aesthetic", metric="aesthetic", lo=min(10.0, lo_a + 0.5)),
            ]
            assert self.kept_ids(records, tighter) <= self.kept_ids(records, rules)

    def test_survivors_independent_of_stage_order(self):
        rng = random.Random(12)
        records = self.sample_records(rng, n=60)
        rules = [
            FilterRule(stage="char_repetition", metric="char_repetition", hi=0.5),
            FilterRule(stage="aesthetic", metric="aesthetic", lo=3.0),
            FilterRule(stage="motion", metric="motion_score", lo=0.1, hi=0.9),
        ]
        baseline = self.kept_ids(records, rules)
        for _ in range(10):
            shuffled = rules[:]
            rng.shuffle(shuffled)
            assert self.kept_ids(records, shuffled) == baseline
