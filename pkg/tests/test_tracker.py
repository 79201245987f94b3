import math

import numpy as np
import pytest
from sklearn.base import clone

from seavis.exceptions import ConfigurationError, OrderingError
from seavis.synth import ScenarioConfig, StreamFrame, generate
from seavis.tracker import (
    Detection,
    MemoryBank,
    MemoryBankTracker,
    Tracklet,
    TrackerConfig,
    finalize,
    match_detections,
    momentum_update,
    process_frame,
    update_bank,
)
from seavis.tracker import HistoryEntry


def det(vec, score=0.9, frame=0, cls=0, gt=None):
    return Detection(np.asarray(vec, dtype=float), score, cls, frame=frame, gt_id=gt)


def bank_with(*vectors):
    bank = MemoryBank()
    for v in vectors:
        v = np.asarray(v, dtype=float)
        bank.tracklets.append(Tracklet(bank.next_id, v / np.linalg.norm(v)))
        bank.next_id += 1
    return bank


class TestMatch:
    def test_empty_bank(self):
        assert match_detections(MemoryBank(), [det([1, 0]), det([0, 1])], TrackerConfig()) == [None, None]

    def test_exact_match(self):
        bank = bank_with([0.6, 0.8])
        assert match_detections(bank, [det([0.6, 0.8])], TrackerConfig(match_threshold=0.5)) == [1]

    def test_higher_similarity_wins(self):
        bank = bank_with([1, 0])
        d1 = det([0.9, math.sqrt(1 - 0.81)])
        d2 = det([0.8, 0.6])
        assert match_detections(bank, [d2, d1], TrackerConfig()) == [None, 1]

    def test_below_threshold_unmatched(self):
        bank = bank_with([1, 0])
        assert match_detections(bank, [det([0.4, math.sqrt(0.84)])], TrackerConfig()) == [None]

    def test_threshold_is_strict(self):
        bank = bank_with([1, 0])
        assert match_detections(bank, [det([0.5, math.sqrt(0.75)])], TrackerConfig(match_threshold=0.5)) == [None]

    def test_tie_breaks(self):
        # both tracklets identical: lower id wins and goes to lower detection index
        bank = bank_with([1, 0], [1, 0])
        out = match_detections(bank, [det([1, 0]), det([1, 0])], TrackerConfig())
        assert out == [1, 2]

    def test_greedy_not_optimal(self):
        # angles: tracklets at 0 and 50 degrees, detections at 20 and -25 degrees
        def unit(deg):
            return [math.cos(math.radians(deg)), math.sin(math.radians(deg))]
        bank = bank_with(unit(0), unit(50))
        dets = [det(unit(20)), det(unit(-25))]
        assert match_detections(bank, dets, TrackerConfig()) == [1, None]
        assert match_detections(bank, dets, TrackerConfig(matching="hungarian")) == [2, 1]

    def test_inactive_ignored(self):
        bank = bank_with([1, 0])
        bank.tracklets[0].active = False
        assert match_detections(bank, [det([1, 0])], TrackerConfig()) == [None]

    def test_ordering_error(self):
        bank = bank_with([1, 0])
        bank.frame_cursor = 3
        with pytest.raises(OrderingError):
            match_detections(bank, [det([1, 0], frame=3)], TrackerConfig())

    def test_bi_softmax(self):
        bank = bank_with([1, 0], [0, 1])
        out = match_detections(bank, [det([0, 1]), det([1, 0])], TrackerConfig(similarity="bi-softmax"))
        assert out == [2, 1]


class TestUpdate:
    def test_momentum_hand_case(self):
        np.testing.assert_allclose(momentum_update(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.75),
                                   np.array([3.0, 1.0]) / math.sqrt(10), atol=1e-12)
        np.testing.assert_allclose(np.array([3.0, 1.0]) / math.sqrt(10), [0.9487, 0.3162], atol=1e-4)

    def test_new_tracklet(self):
        bank = MemoryBank(next_id=5)
        out = update_bank(bank, [None], [det([1, 1], score=0.9)], TrackerConfig(new_tracklet_score=0.6))
        assert [t.id for t in bank.tracklets] == [5]
        assert bank.next_id == 6
        assert [e.track_id for e in out.entries] == [5]

    def test_suppressed(self):
        bank = MemoryBank()
        out = update_bank(bank, [None], [det([1, 1], score=0.2, frame=0)], TrackerConfig(new_tracklet_score=0.6))
        assert bank.tracklets == [] and bank.next_id == 1
        assert out.entries == []
        assert bank.frame_cursor == 0

    def test_audio_gate(self):
        cfg = TrackerConfig(audio_gate=0.5)
        bank = MemoryBank()
        update_bank(bank, [None, None], [det([1, 0]), det([0, 1])], cfg, audio_anchor=np.array([1.0, 0.1]))
        assert len(bank.tracklets) == 1
        np.testing.assert_allclose(bank.tracklets[0].ma_embedding, [1, 0])

    def test_audio_gate_requires_anchor(self):
        with pytest.raises(ConfigurationError):
            update_bank(MemoryBank(), [None], [det([1, 0])], TrackerConfig(audio_gate=0.5))

    def test_matched_update(self):
        bank = bank_with([1, 0])
        update_bank(bank, [1], [det([0, 1], frame=2)], TrackerConfig(momentum=0.75))
        tr = bank.tracklets[0]
        np.testing.assert_allclose(tr.ma_embedding, np.array([3, 1]) / math.sqrt(10))
        assert tr.last_seen == 2 and len(tr.history) == 1

    def test_deactivation(self):
        bank = bank_with([1, 0])
        bank.tracklets[0].last_seen = 0
        cfg = TrackerConfig(max_inactive_frames=2)
        update_bank(bank, [], [], cfg, frame=2)
        assert bank.tracklets[0].active
        update_bank(bank, [], [], cfg, frame=3)
        assert not bank.tracklets[0].active

    def test_ma_stays_unit(self):
        rng = np.random.default_rng(0)
        bank = MemoryBank()
        cfg = TrackerConfig(match_threshold=-1.0)
        for t in range(50):
            d = det(rng.normal(size=6), frame=t)
            update_bank(bank, match_detections(bank, [d], cfg), [d], cfg)
            assert abs(np.linalg.norm(bank.tracklets[0].ma_embedding) - 1) < 1e-9
        assert len(bank.tracklets) == 1


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        {"momentum": 1.0}, {"momentum": -0.1}, {"match_threshold": 1.5}, {"similarity": "l1"},
        {"matching": "auction"}, {"audio_gate": 2.0}, {"max_inactive_frames": -1},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            TrackerConfig(**kwargs)


class TestProcessFrame:
    def test_replay_identical(self):
        stream = generate(ScenarioConfig(num_instances=3, num_frames=15, seed=2,
                                         sounding_schedule=[[[0, 15]], [[0, 8]], [[4, 15]]]))
        outs = []
        for _ in range(2):
            bank = MemoryBank()
            outs.append([process_frame(bank, f, TrackerConfig())[0].to_dict() for f in stream.frames])
        assert outs[0] == outs[1]

    def test_out_of_order(self):
        stream = generate(ScenarioConfig(num_frames=3))
        bank = MemoryBank()
        process_frame(bank, stream.frames[1], TrackerConfig())
        with pytest.raises(OrderingError):
            process_frame(bank, stream.frames[0], TrackerConfig())
        with pytest.raises(OrderingError):
            process_frame(bank, stream.frames[1], TrackerConfig())

    def test_clean_two_instances(self):
        stream = generate(ScenarioConfig(num_instances=2, num_frames=20, seed=11))
        bank = MemoryBank()
        mapping = {}
        for f in stream.frames:
            out, bank = process_frame(bank, f, TrackerConfig())
            for e in out.entries:
                mapping.setdefault(e.gt_id, set()).add(e.track_id)
        assert mapping == {0: {1}, 1: {2}}

    def test_silent_flip_suppressed(self):
        flip = 6
        stream = generate(ScenarioConfig(num_instances=2, num_frames=14, seed=3,
                                         sounding_schedule=[[[0, flip]], [[0, 14]]]))
        bank = MemoryBank()
        for f in stream.frames:
            out, bank = process_frame(bank, f, TrackerConfig())
            gts = [e.gt_id for e in out.entries]
            if f.frame >= flip:
                assert 0 not in gts
        assert bank.next_id == 3

    def test_audio_gate_uses_frame_audio(self):
        frame = StreamFrame(0, np.array([1.0, 0.0]), [det([1, 0.05]), det([0, 1])])
        out, bank = process_frame(MemoryBank(), frame, TrackerConfig(audio_gate=0.8))
        assert [e.det_index for e in out.entries] == [0]


class TestFinalize:
    def test_empty(self):
        assert finalize(MemoryBank()).tracks == []

    def test_constant_class(self):
        bank = MemoryBank()
        cfg = TrackerConfig()
        for t in range(3):
            d = det([1, 0], frame=t, cls=4)
            update_bank(bank, match_detections(bank, [d], cfg), [d], cfg)
        (track,) = finalize(bank).tracks
        assert track.class_id == 4 and track.frames == [0, 1, 2]

    def test_mean_class_scores(self):
        # A: 0.6 + 0.6 over 3 entries = 0.4, B: 0.9 / 3 = 0.3
        tr = Tracklet(1, np.array([1.0, 0.0]), [
            HistoryEntry(0, np.zeros(2), 0.6, 0),
            HistoryEntry(1, np.zeros(2), 0.9, 1),
            HistoryEntry(2, np.zeros(2), 0.6, 0),
        ])
        (track,) = finalize(MemoryBank([tr], 2, 2)).tracks
        assert track.class_id == 0
        assert abs(track.score - 0.4) < 1e-12

    def test_ordered_by_id_and_records(self):
        trs = [Tracklet(i, np.array([1.0, 0.0]), [HistoryEntry(i, np.zeros(2), 0.5, 0)]) for i in (3, 1, 2)]
        result = finalize(MemoryBank(trs, 4, 3))
        assert [t.id for t in result.tracks] == [1, 2, 3]
        records = result.to_records()
        assert list(records[0]) == ["tracks"]
        assert [r["frame"] for r in records[1:]] == [1, 2, 3]


class TestEstimator:
    def test_params(self):
        est = MemoryBankTracker(match_threshold=0.4)
        assert clone(est).get_params()["match_threshold"] == 0.4

    def test_fit_equals_partial_fit(self):
        stream = generate(ScenarioConfig(num_instances=3, num_frames=10, seed=8))
        a = MemoryBankTracker().fit_predict(stream.frames)
        est = MemoryBankTracker()
        for f in stream.frames:
            est.partial_fit(f)
        assert [o.to_dict() for o in a] == [o.to_dict() for o in est.outputs_]
        assert len(est.finalize().tracks) == 3

    def test_refit_resets(self):
        stream = generate(ScenarioConfig(num_frames=5))
        est = MemoryBankTracker().fit(stream.frames)
        est.fit(stream.frames)
        assert len(est.outputs_) == 5

    def test_invalid_param_surfaces_on_fit(self):
        with pytest.raises(ConfigurationError):
            MemoryBankTracker(momentum=2.0).fit([])
