"""Model switching, confusion statistics, and the hierarchical user profile."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from martwin import (
    ConfusionStats,
    SwitchState,
    msf_step,
    new_profile,
    profile_snapshot,
    record_experience,
    switch_sequence,
    update_confusion,
)
from martwin.predictors import PredictedAction
from martwin.twin import STAT_CLAMP_HI, STAT_CLAMP_LO

from test_predictors import synthetic_store


def switching_oracle(counts, delta, patience):
    """Line-by-line transcription of the switching pseudocode, kept independent
    of the library implementation: h/m are running variables, the first slot is
    initialized to the detailed model, and counts before the start are zero."""
    h, m = 1, 0
    hs = [h]
    for t in range(1, len(counts)):
        k1 = counts[t - 1]
        k2 = counts[t - 2] if t - 2 >= 0 else 0
        if k1 - k2 > delta:
            h, m = 1, 0
        else:
            m = m + 1
            if m >= patience:
                h, m = 0, 0
    # record after each iteration
        hs.append(h)
    return hs


class TestMsfStep:
    def test_initial_state(self):
        state = SwitchState()
        assert state.h == 1 and state.m == 0

    def test_big_jump_forces_detailed(self):
        for prior in (SwitchState(0, 2), SwitchState(1, 1), SwitchState(0, 0)):
            h, new = msf_step(prior, k_prev=8, k_prev2=2, delta=4, patience=3)
            assert h == 1
            assert new == SwitchState(1, 0)

    def test_three_calm_slots_fall_back(self):
        # delta=4, patience=3: m runs 1, 2 then the third calm slot resets to h=0
        state = SwitchState(1, 0)
        seen = []
        for _ in range(3):
            h, state = msf_step(state, 2, 2, delta=4, patience=3)
            seen.append((h, state.m))
        assert seen == [(1, 1), (1, 2), (0, 0)]

    def test_negative_difference_is_calm(self):
        # the trigger is the signed difference: a drop never selects detailed
        h, state = msf_step(SwitchState(0, 0), k_prev=0, k_prev2=9, delta=0, patience=2)
        assert h == 0 and state.m == 1

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            msf_step(SwitchState(), 1, 1, delta=-1, patience=3)
        with pytest.raises(ValueError):
            msf_step(SwitchState(), 1, 1, delta=1, patience=0)

    def test_matches_oracle_on_random_sequences(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            counts = rng.integers(0, 11, size=200).tolist()
            assert switch_sequence(counts, 4, 3) == switching_oracle(counts, 4, 3)

    @given(
        counts=st.lists(st.integers(min_value=0, max_value=10), min_size=1, max_size=60),
        delta=st.integers(min_value=0, max_value=6),
        patience=st.integers(min_value=1, max_value=5),
    )
    @settings(max_examples=150)
    def test_detailed_guaranteed_on_jump(self, counts, delta, patience):
        hs = switch_sequence(counts, delta, patience)
        for t in range(1, len(counts)):
            k2 = counts[t - 2] if t >= 2 else 0
            if counts[t - 1] - k2 > delta:
                assert hs[t] == 1

    def test_fallback_needs_patience_calm_slots(self):
        # starting from h=1, h reaches 0 only after >= patience calm slots
        counts = [0, 9, 0, 0, 0, 0, 0]   # jump at t=2 (9-0 > 4)
        hs = switch_sequence(counts, 4, 3)
        assert hs[2] == 1
        assert hs[3] == 1 and hs[4] == 1  # only two calm slots so far
        assert hs[5] == 0


class TestUpdateConfusion:
    def test_perfect_slot_moves_both(self):
        stats = ConfusionStats(p=0.5, q=0.5, lam=0.5, beta=0.9)
        truth = np.array([True, True, False, False])
        out = update_confusion(stats, truth, truth)
        assert out.p == pytest.approx(0.55)
        assert out.q == pytest.approx(0.55)

    def test_all_negative_slot_skips_p(self):
        stats = ConfusionStats(p=0.7, q=0.5, lam=0.5, beta=0.9)
        truth = np.zeros(10, dtype=bool)
        pred = np.zeros(10, dtype=bool)
        out = update_confusion(stats, truth, pred)
        assert out.p == stats.p
        assert out.q == pytest.approx(0.9 * 0.5 + 0.1 * 1.0)
        assert out.lam == pytest.approx(0.9 * 0.5)

    def test_lambda_ewma_value(self):
        stats = ConfusionStats(p=0.8, q=0.8, lam=0.5, beta=0.9)
        truth = np.array([True, True] + [False] * 8)
        out = update_confusion(stats, truth, truth)
        assert out.lam == pytest.approx(0.47)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            update_confusion(ConfusionStats(), np.zeros(3, bool), np.zeros(4, bool))

    @given(
        data=st.lists(
            st.tuples(
                st.lists(st.booleans(), min_size=5, max_size=5),
                st.lists(st.booleans(), min_size=5, max_size=5),
            ),
            min_size=1,
            max_size=40,
        )
    )
    @settings(max_examples=100)
    def test_clamped_under_arbitrary_updates(self, data):
        stats = ConfusionStats()
        for truth, pred in data:
            stats = update_confusion(stats, np.array(truth), np.array(pred))
            for v in (stats.p, stats.q, stats.lam):
                assert STAT_CLAMP_LO <= v <= STAT_CLAMP_HI

    def test_constructor_rejects_out_of_clamp(self):
        with pytest.raises(ValueError):
            ConfusionStats(p=0.0)
        with pytest.raises(ValueError):
            ConfusionStats(lam=1.0)


class TestUserProfile:
    @staticmethod
    def one_record(store_source, i=0):
        rec = list(store_source)[i]
        return rec.detailed, rec.simplified, rec.truth

    def test_append_to_empty(self):
        profile = new_profile(capacity=10)
        s_d, s_s, truth = self.one_record(synthetic_store(1))
        record_experience(profile, s_d, s_s, truth, PredictedAction.from_scores(np.zeros(10)))
        assert len(profile.user_oriented.store) == 1

    def test_ring_eviction(self):
        profile = new_profile(capacity=3)
        source = synthetic_store(4)
        for rec in source:
            record_experience(
                profile, rec.detailed, rec.simplified, rec.truth,
                PredictedAction.from_scores(np.zeros(10)),
            )
        store = profile.user_oriented.store
        assert len(store) == 3
        assert [r.seq for r in store] == [1, 2, 3]  # oldest evicted

    def test_bulk_appends_stay_chronological(self):
        profile = new_profile(capacity=200)
        source = synthetic_store(100)
        for rec in source:
            record_experience(
                profile, rec.detailed, rec.simplified, rec.truth,
                PredictedAction.from_scores(np.zeros(10)),
            )
        seqs = [r.seq for r in profile.user_oriented.store]
        assert all(a < b for a, b in zip(seqs, seqs[1:]))
        assert len(seqs) == 100

    def test_snapshot_categories_disjoint(self):
        profile = new_profile()
        snap = profile_snapshot(profile)
        assert set(snap) == {"user_oriented", "configuration_oriented", "management_oriented"}
        keys = [set(v) for v in snap.values()]
        for i in range(3):
            for j in range(i + 1, 3):
                assert not keys[i] & keys[j]

    def test_snapshot_reflects_recent_pairs(self):
        profile = new_profile()
        s_d, s_s, truth = self.one_record(synthetic_store(1))
        pred = PredictedAction.from_count(2, 10, 0.2)
        record_experience(profile, s_d, s_s, truth, pred)
        snap = profile_snapshot(profile)
        pair = snap["user_oriented"]["recent_pairs"][-1]
        assert pair == {"k_true": int(truth.sum()), "k_pred": 2}
