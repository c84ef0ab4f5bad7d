import json

import numpy as np
import pytest

from structbench.dataset import CatchRecord, DatasetManifest, TripletRecord
from structbench.sessions import (
    CATCH_EVERY,
    ProtocolError,
    ResponseRecord,
    ScheduleError,
    Session,
    Trial,
    TrialSchedule,
    build_schedule,
)


def make_manifest(n_triplets, n_catch):
    records = [TripletRecord(id=f"t{i:04d}", original_path=f"t{i:04d}_orig.png",
                             variant_paths=[f"t{i:04d}_var0.png", f"t{i:04d}_var1.png"],
                             seeds=[2 * i, 2 * i + 1], config_hash="ab" * 8)
               for i in range(n_triplets)]
    catch = [CatchRecord(id=f"c{i:04d}", original_path=f"c{i:04d}_orig.png",
                         mirrored_path=f"c{i:04d}_mirror.png",
                         disrupted_path=f"c{i:04d}_disr.png", seed=i)
             for i in range(n_catch)]
    return DatasetManifest(format_version=1, featurenet_config={},
                           synthesis_config={}, base_seed=0,
                           records=records, catch_records=catch)


class TestTrial:
    def test_display_paths_follow_permutation(self):
        t = Trial("standard", ("a", "b", "c"), 0, (2, 0, 1))
        assert t.display_paths() == ("c", "a", "b")
        assert t.correct_position() == 1

    def test_bad_permutation_rejected(self):
        with pytest.raises(ScheduleError):
            Trial("standard", ("a", "b", "c"), 0, (0, 0, 2))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ScheduleError):
            Trial("warmup", ("a", "b", "c"), 0, (0, 1, 2))


class TestBuildSchedule:
    def test_catch_interleaving_20_standard(self):
        sched = build_schedule(make_manifest(20, 2), n_standard=20, seed=0)
        assert len(sched.trials) == 22
        kinds = [t.kind for t in sched.trials]
        # catch trials land at interleaved positions 11 and 22 (1-based)
        assert kinds[10] == "catch" and kinds[21] == "catch"
        assert kinds.count("catch") == 2

    @pytest.mark.parametrize("n_standard", [1, 9, 10, 35, 100])
    def test_catch_count_and_positions(self, n_standard):
        n_catch = n_standard // CATCH_EVERY
        sched = build_schedule(make_manifest(n_standard, max(n_catch, 1)),
                               n_standard=n_standard, seed=3)
        kinds = [t.kind for t in sched.trials]
        assert kinds.count("catch") == n_catch
        assert kinds.count("standard") == n_standard
        seen_standard = 0
        for i, kind in enumerate(kinds):
            if kind == "standard":
                seen_standard += 1
            else:
                assert seen_standard % CATCH_EVERY == 0

    def test_break_after_every_100_standard(self):
        sched = build_schedule(make_manifest(250, 25), n_standard=250, seed=1)
        assert len(sched.break_after) == 2
        for idx in sched.break_after:
            kinds = [t.kind for t in sched.trials[:idx + 1]]
            assert kinds.count("standard") % 100 == 0
            assert sched.trials[idx].kind == "standard"

    def test_no_breaks_below_100(self):
        sched = build_schedule(make_manifest(99, 9), n_standard=99, seed=1)
        assert sched.break_after == ()

    def test_catch_images_never_in_standard_trials(self):
        sched = build_schedule(make_manifest(50, 5), n_standard=50, seed=2)
        standard_imgs = {p for t in sched.trials if t.kind == "standard"
                         for p in t.image_paths}
        catch_imgs = {p for t in sched.trials if t.kind == "catch"
                      for p in t.image_paths}
        assert standard_imgs.isdisjoint(catch_imgs)

    def test_correct_answer_convention(self):
        sched = build_schedule(make_manifest(10, 1), n_standard=10, seed=5)
        for t in sched.trials:
            if t.kind == "standard":
                assert t.image_paths[t.correct_index].endswith("_orig.png")
            else:
                assert t.image_paths[t.correct_index].endswith("_disr.png")

    def test_deterministic_for_seed(self):
        m = make_manifest(30, 3)
        a = build_schedule(m, 30, seed=11)
        b = build_schedule(m, 30, seed=11)
        c = build_schedule(m, 30, seed=12)
        assert a.schedule_hash() == b.schedule_hash()
        assert a.schedule_hash() != c.schedule_hash()

    def test_insufficient_assets(self):
        with pytest.raises(ScheduleError, match="triplets"):
            build_schedule(make_manifest(5, 1), n_standard=10, seed=0)
        with pytest.raises(ScheduleError, match="catch"):
            build_schedule(make_manifest(20, 1), n_standard=20, seed=0)

    def test_answer_position_roughly_uniform(self):
        sched = build_schedule(make_manifest(3000, 300), n_standard=3000, seed=9)
        counts = np.bincount([t.correct_position() for t in sched.trials],
                             minlength=3)
        n = counts.sum()
        chi2 = float(((counts - n / 3) ** 2 / (n / 3)).sum())
        # chi-square with 2 dof: p > 0.01 means chi2 below 9.21
        assert chi2 < 9.21

    def test_round_trip_json(self):
        sched = build_schedule(make_manifest(20, 2), 20, seed=4)
        again = TrialSchedule.from_json_dict(sched.to_json_dict())
        assert again == sched


def tiny_session(tmp_path=None, n_standard=10, seed=0):
    sched = build_schedule(make_manifest(n_standard, max(n_standard // 10, 1)),
                           n_standard, seed=seed)
    log = None if tmp_path is None else tmp_path / "session.jsonl"
    return Session(sched, session_id="s01", log_path=log)


class TestSubmitResponse:
    def test_boundary_1999_valid(self):
        s = tiny_session()
        key = s.schedule.trials[0].correct_position() + 1
        r = s.submit_response(0, key, 1999.0)
        assert r.valid and r.correct

    def test_boundary_2000_valid(self):
        s = tiny_session()
        key = s.schedule.trials[0].correct_position() + 1
        assert s.submit_response(0, key, 2000.0).valid

    def test_boundary_2001_invalid(self):
        s = tiny_session()
        key = s.schedule.trials[0].correct_position() + 1
        r = s.submit_response(0, key, 2001.0)
        assert not r.valid and not r.correct

    def test_timeout_record(self):
        s = tiny_session()
        r = s.submit_response(0, None, 2000.0)
        assert r.key is None and not r.valid and not r.correct

    def test_wrong_key_valid_incorrect(self):
        s = tiny_session()
        wrong = (s.schedule.trials[0].correct_position() + 1) % 3 + 1
        r = s.submit_response(0, wrong, 500.0)
        assert r.valid and not r.correct

    def test_duplicate_rejected(self):
        s = tiny_session()
        s.submit_response(0, 1, 100.0)
        with pytest.raises(ProtocolError, match="duplicate"):
            s.submit_response(0, 2, 100.0)

    def test_out_of_order_rejected(self):
        s = tiny_session()
        with pytest.raises(ProtocolError, match="out-of-order"):
            s.submit_response(3, 1, 100.0)

    def test_bad_key_rejected(self):
        s = tiny_session()
        with pytest.raises(ProtocolError, match="key"):
            s.submit_response(0, 4, 100.0)

    def test_timing_suspect_flag(self):
        s = tiny_session()
        r = s.submit_response(0, 1, 1800.0, server_elapsed_ms=1000.0)
        assert r.timing_suspect
        r2 = s.submit_response(1, 1, 1400.0, server_elapsed_ms=1000.0)
        assert not r2.timing_suspect
        # flagged, not rejected: validity still follows the 2000 ms rule
        assert r.valid

    def test_finalized_session_refuses_responses(self):
        s = tiny_session()
        s.finalize()
        with pytest.raises(ProtocolError, match="finalized"):
            s.submit_response(0, 1, 100.0)


def answer_all(session, standard_correct=True, catch_correct=True,
               elapsed=500.0):
    for i, t in enumerate(session.schedule.trials):
        right = standard_correct if t.kind == "standard" else catch_correct
        pos = t.correct_position()
        key = pos + 1 if right else (pos + 1) % 3 + 1
        session.submit_response(i, key, elapsed)


class TestScoring:
    def test_all_correct(self):
        s = tiny_session()
        answer_all(s)
        score = s.finalize()
        assert score.accuracy == 1.0 and score.catch_accuracy == 1.0
        assert not score.undefined_accuracy

    def test_catch_excluded_from_headline(self):
        s = tiny_session()
        answer_all(s, standard_correct=True, catch_correct=False)
        score = s.finalize()
        assert score.accuracy == 1.0
        assert score.catch_accuracy == 0.0

    def test_invalid_trials_dropped_from_denominator(self):
        s = tiny_session()
        for i, t in enumerate(s.schedule.trials):
            key = t.correct_position() + 1
            # half the standard trials time out
            elapsed = 2500.0 if (t.kind == "standard" and i % 2 == 0) else 500.0
            s.submit_response(i, key, elapsed)
        score = s.score()
        assert score.n_standard_valid < score.n_standard_total
        assert score.accuracy == 1.0

    def test_zero_valid_flagged(self):
        s = tiny_session()
        for i in range(len(s.schedule.trials)):
            s.submit_response(i, None, 2500.0)
        score = s.finalize()
        assert score.accuracy is None and score.undefined_accuracy
        assert score.timeouts == len(s.schedule.trials)


class TestPersistence:
    def test_jsonl_layout(self, tmp_path):
        s = tiny_session(tmp_path)
        answer_all(s)
        lines = (tmp_path / "session.jsonl").read_text().splitlines()
        assert len(lines) == 1 + len(s.schedule.trials)
        header = json.loads(lines[0])
        assert header["type"] == "header"
        assert header["schedule_hash"] == s.schedule.schedule_hash()
        for line in lines[1:]:
            rec = json.loads(line)
            assert rec["session_id"] == "s01"

    def test_finalize_does_not_mutate_log(self, tmp_path):
        s = tiny_session(tmp_path)
        answer_all(s)
        before = (tmp_path / "session.jsonl").read_bytes()
        s.finalize()
        assert (tmp_path / "session.jsonl").read_bytes() == before

    def test_resume_round_trip(self, tmp_path):
        s = tiny_session(tmp_path)
        for i in range(4):
            s.submit_response(i, 1, 300.0)
        resumed = Session.load(tmp_path / "session.jsonl")
        assert resumed.session_id == s.session_id
        assert resumed.current_trial_index == 4
        assert resumed.schedule == s.schedule
        resumed.submit_response(4, 2, 700.0)
        assert Session.load(tmp_path / "session.jsonl").current_trial_index == 5

    def test_resumed_scores_match(self, tmp_path):
        s = tiny_session(tmp_path)
        answer_all(s, catch_correct=False)
        resumed = Session.load(tmp_path / "session.jsonl")
        assert resumed.score().to_json_dict() == s.score().to_json_dict()
