"""Session state machine: segment geometry, choice ingestion, replay."""

import numpy as np
import pytest

from slsopt.acquisition import AcquisitionConfig
from slsopt.oracles import NegL2Oracle
from slsopt.session import (ConcurrentChoiceError, Session,
                            SessionCompleteError, SessionConfig, build_segment,
                            extend_endpoints, extend_segment, replay_events)

# trimmed acquisition budget keeps the loop tests fast
FAST_ACQ = AcquisitionConfig(n_uniform_candidates=200, n_local_refinements=4,
                             local_steps=40)
FAST = SessionConfig(max_steps=30, acquisition=FAST_ACQ)


class TestExtendSegment:
    def test_identity_factor(self):
        a, b = np.array([0.2, 0.3]), np.array([0.6, 0.7])
        ea, eb = extend_segment(a, b, 1.0)
        np.testing.assert_allclose(ea, a, atol=1e-15)
        np.testing.assert_allclose(eb, b, atol=1e-15)

    def test_hand_geometry(self):
        ea, eb = extend_segment(np.array([0.2, 0.4]), np.array([0.6, 0.4]), 1.25)
        np.testing.assert_allclose(ea, [0.15, 0.4], atol=1e-15)
        np.testing.assert_allclose(eb, [0.65, 0.4], atol=1e-15)

    def test_upper_clip(self):
        ea, eb = extend_segment(np.array([0.9]), np.array([1.0]), 1.25)
        np.testing.assert_allclose(ea, [0.8875], atol=1e-15)
        np.testing.assert_allclose(eb, [1.0], atol=1e-15)

    def test_preclip_length_ratio(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            a, b = rng.uniform(size=(2, 16))
            ea, eb = extend_endpoints(a, b, 1.25)
            ratio = np.linalg.norm(eb - ea) / np.linalg.norm(b - a)
            assert ratio == pytest.approx(1.25, abs=1e-12)

    def test_factor_below_one_rejected(self):
        with pytest.raises(ValueError):
            extend_segment(np.array([0.1]), np.array([0.9]), 0.9)


class TestBuildSegment:
    def test_points_uniformly_spaced_inclusive(self):
        seg = build_segment(np.array([0.2, 0.8]), np.array([0.6, 0.1]), 1.25, 20)
        np.testing.assert_array_equal(seg.points[0], seg.presented_a)
        np.testing.assert_array_equal(seg.points[-1], seg.presented_b)
        diffs = np.diff(seg.points, axis=0)
        np.testing.assert_allclose(diffs, np.broadcast_to(diffs[0], diffs.shape),
                                   atol=1e-12)

    def test_all_points_in_box(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            a, b = rng.uniform(size=(2, 5))
            seg = build_segment(a, b, 1.25, 20)
            assert np.all((seg.points >= 0.0) & (seg.points <= 1.0))

    def test_matches_parametric_formula(self):
        seg = build_segment(np.array([0.3]), np.array([0.9]), 1.25, 20)
        for k in range(20):
            expected = seg.presented_a + (k / 19) * (seg.presented_b - seg.presented_a)
            np.testing.assert_allclose(seg.points[k], expected, atol=1e-15)


class TestInitSession:
    def test_hand_geometry_1d(self):
        sess = Session(1, endpoints=([0.2], [0.6]), config=FAST)
        np.testing.assert_allclose(sess.segment.presented_a, [0.15], atol=1e-15)
        np.testing.assert_allclose(sess.segment.presented_b, [0.65], atol=1e-15)
        spacing = sess.segment.points[1] - sess.segment.points[0]
        assert spacing[0] == pytest.approx(0.5 / 19, abs=1e-15)

    def test_lower_clip_1d(self):
        sess = Session(1, endpoints=([0.0], [0.8]), config=FAST)
        np.testing.assert_allclose(sess.segment.presented_a, [0.0], atol=1e-15)
        np.testing.assert_allclose(sess.segment.presented_b, [0.9], atol=1e-15)

    def test_seeded_determinism(self):
        s1 = Session(4, config=FAST, seed=99)
        s2 = Session(4, config=FAST, seed=99)
        assert s1.segment.equals_exactly(s2.segment)

    def test_coincident_endpoints_rejected(self):
        with pytest.raises(ValueError, match="coincide"):
            Session(2, endpoints=([0.5, 0.5], [0.5, 0.5]), config=FAST)

    def test_out_of_box_endpoint_rejected(self):
        with pytest.raises(ValueError):
            Session(1, endpoints=([-0.1], [0.5]), config=FAST)


class TestSubmitChoice:
    def test_index_out_of_range_leaves_session_unchanged(self):
        sess = Session(2, config=FAST, seed=3)
        seg_before = sess.segment
        with pytest.raises(IndexError):
            sess.submit_choice(sess.n_points)
        assert sess.step == 0
        assert sess.segment is seg_before
        assert sess.model is None

    def test_endpoint_plus_equals_chosen(self):
        sess = Session(2, config=FAST, seed=5)
        for idx in (0, 7, 19):
            chosen = sess.segment.points[idx].copy()
            sess.submit_choice(idx)
            np.testing.assert_array_equal(sess.segment.endpoint_plus, chosen)

    def test_chosen_point_becomes_observed(self):
        sess = Session(2, config=FAST, seed=11)
        sess.submit_choice(4)
        chosen = sess.history[-1].chosen_point
        dists = [np.linalg.norm(chosen - p) for p in sess.model.points]
        assert min(dists) < 1e-12

    def test_records_winner_and_presented_losers(self):
        sess = Session(2, config=FAST, seed=13)
        sess.submit_choice(9)  # interior choice: both endpoints lose
        rec = sess.model.records[-1]
        assert len(rec.losers) == 2
        sess2 = Session(2, config=FAST, seed=13)
        sess2.submit_choice(0)  # endpoint choice: only the other endpoint loses
        rec2 = sess2.model.records[-1]
        assert len(rec2.losers) == 1

    def test_budget_exhaustion(self):
        config = SessionConfig(max_steps=2, acquisition=FAST_ACQ)
        sess = Session(1, config=config, seed=1)
        sess.submit_choice(3)
        sess.submit_choice(8)
        with pytest.raises(SessionCompleteError):
            sess.submit_choice(1)
        assert sess.step == 2

    def test_concurrent_choice_rejected(self):
        sess = Session(1, config=FAST, seed=2)
        acquired = sess._lock.acquire(blocking=False)
        assert acquired
        try:
            with pytest.raises(ConcurrentChoiceError):
                sess.submit_choice(5)
        finally:
            sess._lock.release()
        sess.submit_choice(5)  # works once the writer is gone
        assert sess.step == 1

    def test_all_presented_points_stay_in_box(self):
        sess = Session(3, config=FAST, seed=21)
        oracle = NegL2Oracle(np.array([0.9, 0.1, 0.5]))
        for _ in range(6):
            assert np.all((sess.segment.points >= 0) & (sess.segment.points <= 1))
            sess.submit_choice(oracle.choose(sess.segment))

    def test_non_integer_index_rejected(self):
        sess = Session(1, config=FAST, seed=2)
        with pytest.raises(TypeError):
            sess.submit_choice(2.5)

    def test_converges_toward_target_1d(self):
        # noiseless user with a fixed target: after 10 steps the best chosen
        # point must be strictly closer than the first chosen point
        for seed in range(20):
            config = SessionConfig(acquisition=FAST_ACQ, seed=seed)
            sess = Session(1, config=config)
            oracle = NegL2Oracle(np.array([0.7]))
            dists = []
            for _ in range(10):
                sess.submit_choice(oracle.choose(sess.segment))
                dists.append(abs(sess.history[-1].chosen_point[0] - 0.7))
            assert min(dists) < dists[0], f"seed {seed}: no improvement over step 0"


class TestDegenerateProposal:
    def test_kick_produces_distinct_endpoint(self):
        sess = Session(2, config=FAST, seed=31)
        sess.submit_choice(10)
        chosen = np.array([0.5, 0.5])
        kicked = sess._exploration_kick(chosen)
        assert np.linalg.norm(kicked - chosen) >= 1e-6
        assert np.all((kicked >= 0) & (kicked <= 1))

    def test_kick_at_corner(self):
        sess = Session(2, config=FAST, seed=32)
        sess.submit_choice(10)
        corner = np.array([1.0, 1.0])
        kicked = sess._exploration_kick(corner)
        assert np.linalg.norm(kicked - corner) >= 1e-6
        assert np.all((kicked >= 0) & (kicked <= 1))


class TestBestPoint:
    def test_requires_a_step(self):
        sess = Session(1, config=FAST, seed=4)
        with pytest.raises(ValueError, match="no choices yet"):
            sess.best_point()

    def test_last_chosen_matches_history_tail(self):
        sess = Session(2, config=FAST, seed=6)
        oracle = NegL2Oracle(np.array([0.2, 0.9]))
        for k in range(3):
            sess.submit_choice(oracle.choose(sess.segment))
            np.testing.assert_array_equal(sess.best_point("last_chosen"),
                                          sess.history[k].chosen_point)

    def test_map_argmax_returns_max_goodness_point(self):
        sess = Session(2, config=FAST, seed=7)
        oracle = NegL2Oracle(np.array([0.4, 0.6]))
        for _ in range(4):
            sess.submit_choice(oracle.choose(sess.segment))
        best = sess.best_point("map_argmax")
        idx = int(np.argmax(sess.model.goodness))
        np.testing.assert_array_equal(best, sess.model.points[idx])

    def test_map_goodness_respects_transitive_chain(self):
        # records a > b > c must put a's MAP goodness on top
        from slsopt.preference_gp import fit_map
        pts = np.array([[0.1, 0.1], [0.5, 0.5], [0.9, 0.9]])
        model = fit_map(pts, [(0, (1,)), (1, (2,))])
        assert model.goodness[0] > model.goodness[1] > model.goodness[2]

    def test_unknown_mode(self):
        sess = Session(1, config=FAST, seed=8)
        sess.submit_choice(2)
        with pytest.raises(ValueError):
            sess.best_point("nonsense")


class TestReplay:
    def test_bit_exact_replay_random_endpoints(self):
        sess = Session(2, config=FAST, seed=17)
        oracle = NegL2Oracle(np.array([0.3, 0.8]))
        for _ in range(5):
            sess.submit_choice(oracle.choose(sess.segment))
        replayed = replay_events(sess.events)
        assert replayed.segment.equals_exactly(sess.segment)
        for h1, h2 in zip(sess.history, replayed.history):
            np.testing.assert_array_equal(h1.chosen_point, h2.chosen_point)
            assert h1.segment.equals_exactly(h2.segment)

    def test_bit_exact_replay_explicit_endpoints(self):
        sess = Session(2, endpoints=([0.1, 0.2], [0.9, 0.8]), config=FAST)
        for idx in (3, 12, 0):
            sess.submit_choice(idx)
        replayed = replay_events(sess.events)
        assert replayed.segment.equals_exactly(sess.segment)

    def test_replay_json_roundtrip(self):
        import json

        sess = Session(1, config=FAST, seed=23)
        for idx in (5, 14):
            sess.submit_choice(idx)
        lines = [json.dumps(ev) for ev in sess.events]
        events = [json.loads(line) for line in lines]
        replayed = replay_events(events)
        assert replayed.segment.equals_exactly(sess.segment)

    def test_tampered_log_detected(self):
        import copy

        from slsopt.session import ReplayMismatchError

        sess = Session(1, config=FAST, seed=29)
        sess.submit_choice(6)
        events = copy.deepcopy(sess.events)
        events[1]["segment"]["points"][5][0] += 1e-9
        with pytest.raises(ReplayMismatchError):
            replay_events(events)

    def test_history_length_equals_step(self):
        sess = Session(1, config=FAST, seed=35)
        for k in (2, 9, 17):
            sess.submit_choice(k)
        assert len(sess.history) == sess.step == 3
