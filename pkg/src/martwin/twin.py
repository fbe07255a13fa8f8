"""Per-user digital twin: profile data model, model switching, accuracy stats.

The profile groups everything the twin tracks about one device into three
disjoint categories: user-oriented data (experience records and recent
truth/prediction pairs), configuration-oriented data (the switching state and
the knobs that configure modeling), and management-oriented data (the moving-
average accuracy statistics consumed by the reservation rule).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .predictors import (
    DetailedState,
    ExperienceStore,
    PredictedAction,
    SimplifiedState,
)
from .trace import LabelingConfig

STAT_CLAMP_LO = 1e-3
STAT_CLAMP_HI = 1.0 - 1e-3


@dataclass(frozen=True)
class SwitchState:
    """Model-switching state: h (1 = detailed model) and the calm-slot counter."""

    h: int = 1
    m: int = 0


def msf_step(
    state: SwitchState, k_prev: int, k_prev2: int, delta: float, patience: int
) -> tuple[int, SwitchState]:
    """One switching update from the last two revealed key-frame counts.

    The trigger is the signed count difference k_prev - k_prev2: a jump above
    delta selects the detailed model immediately; after `patience` consecutive
    non-jump slots the simplified model takes over. Counts before the trace
    start are passed as 0.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if patience < 1:
        raise ValueError("patience must be >= 1")
    diff = k_prev - k_prev2
    if diff > delta:
        return 1, SwitchState(1, 0)
    m = state.m + 1
    if m >= patience:
        return 0, SwitchState(0, 0)
    return state.h, SwitchState(state.h, m)


def switch_sequence(counts: Sequence[int], delta: float, patience: int) -> list[int]:
    """h_t for a whole count sequence; the first slot is pinned to the detailed model."""
    if not counts:
        return []
    state = SwitchState()
    hs = [state.h]
    for t in range(1, len(counts)):
        k_prev = counts[t - 1]
        k_prev2 = counts[t - 2] if t >= 2 else 0
        h, state = msf_step(state, k_prev, k_prev2, delta, patience)
        hs.append(h)
    return hs


def _clamp(v: float) -> float:
    return min(STAT_CLAMP_HI, max(STAT_CLAMP_LO, v))


@dataclass(frozen=True)
class ConfusionStats:
    """Moving-average predictor accuracy: sensitivity p, specificity q, key rate lambda."""

    p: float = 0.8
    q: float = 0.8
    lam: float = 0.2
    beta: float = 0.9

    def __post_init__(self) -> None:
        for name in ("p", "q", "lam"):
            v = getattr(self, name)
            if not STAT_CLAMP_LO <= v <= STAT_CLAMP_HI:
                raise ValueError(f"{name} must lie in [{STAT_CLAMP_LO}, {STAT_CLAMP_HI}]")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")


def update_confusion(stats: ConfusionStats, truth, pred) -> ConfusionStats:
    """Fold one slot's truth/prediction masks into the moving averages.

    Per-slot rates that are undefined on this slot (no positives for p, no
    negatives for q) leave the corresponding average untouched instead of
    imputing an extreme value.
    """
    t = np.asarray(truth, dtype=bool)
    a = np.asarray(pred, dtype=bool)
    if t.shape != a.shape:
        raise ValueError("truth and prediction masks must have equal length")
    beta = stats.beta
    tp = int(np.sum(t & a))
    fn = int(np.sum(t & ~a))
    tn = int(np.sum(~t & ~a))
    fp = int(np.sum(~t & a))

    p = stats.p
    if tp + fn > 0:
        p = beta * p + (1.0 - beta) * (tp / (tp + fn))
    q = stats.q
    if tn + fp > 0:
        q = beta * q + (1.0 - beta) * (tn / (tn + fp))
    lam = beta * stats.lam + (1.0 - beta) * float(t.mean())
    return ConfusionStats(_clamp(p), _clamp(q), _clamp(lam), beta)


@dataclass
class UserOrientedData:
    store: ExperienceStore
    recent_pairs: deque = field(default_factory=lambda: deque(maxlen=100))


@dataclass
class ConfigurationOrientedData:
    switch: SwitchState = field(default_factory=SwitchState)
    switch_threshold: float = 4.0
    switch_patience: int = 3
    window_slots: int = 5
    labeling: LabelingConfig = field(default_factory=LabelingConfig)


@dataclass
class ManagementOrientedData:
    stats: ConfusionStats = field(default_factory=ConfusionStats)


@dataclass
class UserProfile:
    """Hierarchical per-device profile with three disjoint data categories."""

    user_oriented: UserOrientedData
    configuration_oriented: ConfigurationOrientedData
    management_oriented: ManagementOrientedData


def new_profile(
    capacity: int = 2000,
    switch_threshold: float = 4.0,
    switch_patience: int = 3,
    window_slots: int = 5,
    ewma_beta: float = 0.9,
    labeling: LabelingConfig | None = None,
) -> UserProfile:
    return UserProfile(
        UserOrientedData(ExperienceStore(capacity)),
        ConfigurationOrientedData(
            SwitchState(),
            switch_threshold,
            switch_patience,
            window_slots,
            labeling or LabelingConfig(),
        ),
        ManagementOrientedData(ConfusionStats(beta=ewma_beta)),
    )


def record_experience(
    profile: UserProfile,
    detailed: DetailedState,
    simplified: SimplifiedState,
    truth,
    pred: PredictedAction,
) -> UserProfile:
    """Append one slot's states and outcome to the user-oriented category."""
    profile.user_oriented.store.append(detailed, simplified, truth)
    profile.user_oriented.recent_pairs.append(
        (np.asarray(truth, dtype=bool), np.asarray(pred.mask, dtype=bool))
    )
    return profile


def profile_snapshot(profile: UserProfile) -> dict:
    """JSON-ready dump of the profile, one sub-object per data category."""
    store = profile.user_oriented.store
    conf = profile.configuration_oriented
    stats = profile.management_oriented.stats
    return {
        "user_oriented": {
            "experience_records": len(store),
            "experience_capacity": store.capacity,
            "recent_pairs": [
                {"k_true": int(t.sum()), "k_pred": int(a.sum())}
                for t, a in profile.user_oriented.recent_pairs
            ],
        },
        "configuration_oriented": {
            "h": conf.switch.h,
            "m": conf.switch.m,
            "switch_threshold": conf.switch_threshold,
            "switch_patience": conf.switch_patience,
            "window_slots": conf.window_slots,
            "theta_new": conf.labeling.theta_new,
            "theta_overlap": conf.labeling.theta_overlap,
        },
        "management_oriented": {
            "p": stats.p,
            "q": stats.q,
            "lambda": stats.lam,
            "beta": stats.beta,
        },
    }
