"""Shared fixtures: a bursty labeled trace and an experience store built from it."""

from dataclasses import replace

import numpy as np
import pytest

from martwin import (
    CullConfig,
    ExperienceStore,
    GeneratorConfig,
    LabelingConfig,
    SetJaccardIndex,
    SimplifiedState,
    build_detailed_state,
    empty_graph,
    generate_trace,
    label_key_frames,
    slotify,
    update_map,
)

BURSTY_GEN = GeneratorConfig(
    world_fp_count=900,
    view_radius=0.12,
    step_sigma=0.02,
    burst_prob=0.05,
    burst_jump=0.8,
    frames_per_slot=10,
    slot_count=600,
    seed=7,
    fp_drift=0.01,
)


@pytest.fixture(scope="session")
def bursty_trace():
    return label_key_frames(generate_trace(BURSTY_GEN), LabelingConfig(), 10)


@pytest.fixture(scope="session")
def bursty_slots(bursty_trace):
    return slotify(bursty_trace, 10)


def replay_experience(slots, t_w=5, max_map_size=80, redundancy_threshold=0.92):
    """Build per-slot detailed/simplified states the way the simulation does.

    Returns (store with every slot's record, list of live DetailedStates).
    """
    store = ExperienceStore(capacity=len(slots) + 1)
    map_graph = empty_graph()
    index = SetJaccardIndex()
    cull_cfg = CullConfig(max_map_size=max_map_size, redundancy_threshold=redundancy_threshold)
    states = []
    counts: list[int] = []
    for slot in slots:
        s_d = build_detailed_state(map_graph, slot.frames, index=index)
        states.append(s_d)
        hist = counts[-t_w:]
        s_s = SimplifiedState(tuple([0] * (t_w - len(hist)) + hist))
        truth = np.asarray(slot.key_mask, dtype=bool)
        store.append(replace(s_d, map_graph=None), s_s, truth)
        counts.append(slot.key_count)
        new = [fr for fr, k in zip(slot.frames, slot.key_mask) if k]
        if new:
            map_graph, culled = update_map(map_graph, new, cull_cfg)
            for fr in new:
                index.add(fr.frame_id, fr.fps)
            for fid in culled:
                if fid in index:
                    index.remove(fid)
    return store, states


@pytest.fixture(scope="session")
def bursty_experience(bursty_slots):
    return replay_experience(bursty_slots)
