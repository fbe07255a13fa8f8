"""Key-frame trace synthesis, ingestion, labeling, and slot grouping.

A trace is an ordered sequence of camera frames, each carrying the set of
feature-point ids visible in it and, once labeled, a ground-truth key-frame
flag. The synthetic generator walks a viewpoint over a 2-D unit torus strewn
with feature points; occasional viewpoint jumps stand in for tracking loss and
produce the bursty upload traffic the reservation pipeline has to absorb.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .mapgraph import SetJaccardIndex

FeaturePointSet = frozenset  # set of non-negative feature-point ids


class TraceFormatError(ValueError):
    """Malformed or inconsistent trace file."""


@dataclass(frozen=True)
class Frame:
    frame_id: int
    fps: frozenset[int]
    key: bool | None = None  # ground-truth key flag; None until labeled


@dataclass
class FrameTrace:
    """Ordered camera frames with strictly increasing frame ids."""

    frames: list[Frame]

    def __post_init__(self) -> None:
        prev = None
        for f in self.frames:
            if prev is not None and f.frame_id <= prev:
                raise TraceFormatError(
                    f"frame_id {f.frame_id} not strictly increasing (after {prev})"
                )
            prev = f.frame_id

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def labeled(self) -> bool:
        return bool(self.frames) and all(f.key is not None for f in self.frames)


@dataclass(frozen=True)
class TraceSlot:
    """One reservation slot: exactly F consecutive frames plus their key labels."""

    t: int
    frames: tuple[Frame, ...]
    key_mask: tuple[bool, ...]
    key_count: int

    def __post_init__(self) -> None:
        if len(self.frames) != len(self.key_mask):
            raise ValueError("key_mask length must match frame count")
        if self.key_count != sum(self.key_mask):
            raise ValueError("key_count must equal the number of true mask entries")


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic-trace knobs: torus world, random-walk viewpoint, jump bursts.

    fp_drift relocates that fraction of world feature points per slot under
    fresh ids, so revisited areas regain novelty and long traces stay bursty
    instead of saturating once every viewpoint has been mapped.
    """

    world_fp_count: int = 1000
    view_radius: float = 0.12
    step_sigma: float = 0.012
    burst_prob: float = 0.05
    burst_jump: float = 0.35
    frames_per_slot: int = 10
    slot_count: int = 200
    seed: int = 0
    fp_drift: float = 0.0

    def validate(self) -> None:
        if self.world_fp_count < 1:
            raise ValueError("world_fp_count must be >= 1")
        if self.view_radius <= 0:
            raise ValueError("view_radius must be positive")
        if self.step_sigma < 0 or self.burst_jump < 0:
            raise ValueError("step_sigma and burst_jump must be non-negative")
        if not 0.0 <= self.burst_prob <= 1.0:
            raise ValueError("burst_prob must lie in [0, 1]")
        if not 0.0 <= self.fp_drift <= 1.0:
            raise ValueError("fp_drift must lie in [0, 1]")
        if self.frames_per_slot < 1:
            raise ValueError("frames_per_slot must be >= 1")
        if self.slot_count < 1:
            raise ValueError("slot_count must be >= 1")


@dataclass(frozen=True)
class LabelingConfig:
    """Two-threshold key-frame rule.

    A frame becomes a key frame when it is sufficiently novel (max Jaccard to
    every existing key frame below theta_new) while still overlapping the map
    (that max at least theta_overlap).
    """

    theta_new: float = 0.6
    theta_overlap: float = 0.1

    def validate(self) -> None:
        if not 0.0 <= self.theta_overlap <= self.theta_new <= 1.0:
            raise ValueError("need 0 <= theta_overlap <= theta_new <= 1")


def load_trace(path, frames_per_slot: int | None = None) -> FrameTrace:
    """Parse a JSON-lines trace file.

    Each line is {"frame_id": int, "fps": [int, ...], "key": bool?}. The key
    flag must be present on all frames or on none. When frames_per_slot is
    given and the trace is labeled, the frame count must divide evenly.
    """
    frames: list[Frame] = []
    seen: set[int] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or "frame_id" not in obj or "fps" not in obj:
                raise TraceFormatError(f"line {lineno}: expected frame_id and fps fields")
            fid = obj["frame_id"]
            if not isinstance(fid, int) or isinstance(fid, bool):
                raise TraceFormatError(f"line {lineno}: frame_id must be an integer")
            if fid in seen:
                raise TraceFormatError(f"line {lineno}: duplicate frame_id {fid}")
            seen.add(fid)
            fps_raw = obj["fps"]
            if not isinstance(fps_raw, list) or any(
                not isinstance(x, int) or isinstance(x, bool) or x < 0 for x in fps_raw
            ):
                raise TraceFormatError(
                    f"line {lineno}: fps must be a list of non-negative integers"
                )
            key = obj.get("key")
            if key is not None and not isinstance(key, bool):
                raise TraceFormatError(f"line {lineno}: key must be a boolean when present")
            frames.append(Frame(fid, frozenset(fps_raw), key))
    if not frames:
        raise TraceFormatError(f"empty trace: no frames in {path}")
    n_labeled = sum(f.key is not None for f in frames)
    if n_labeled not in (0, len(frames)):
        raise TraceFormatError("key flags must be present on all frames or on none")
    if frames_per_slot is not None and n_labeled and len(frames) % frames_per_slot:
        raise TraceFormatError(
            f"labeled trace of {len(frames)} frames does not divide into slots of "
            f"{frames_per_slot}"
        )
    return FrameTrace(frames)


def save_trace(trace: FrameTrace, path) -> None:
    """Write a trace as JSON-lines (key flags included only when labeled)."""
    with open(path, "w", encoding="utf-8") as fh:
        for f in trace:
            obj: dict = {"frame_id": f.frame_id, "fps": sorted(f.fps)}
            if f.key is not None:
                obj["key"] = f.key
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def generate_trace(cfg: GeneratorConfig) -> FrameTrace:
    """Synthesize an unlabeled trace; pure function of the config (seed included).

    The viewpoint performs a Gaussian random walk on the unit torus. With
    probability burst_prob a slot becomes a burst: the viewpoint additionally
    pans by burst_jump over the course of that slot (a rapid head turn /
    tracking-loss episode), sweeping fresh territory and producing a key-frame
    spike once labeled. A frame sees every world feature point within
    view_radius.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n_world = cfg.world_fp_count
    world = rng.random((n_world, 2))
    world_ids = np.arange(n_world)
    next_id = n_world
    f = cfg.frames_per_slot
    n_frames = cfg.slot_count * f

    burst = rng.random(cfg.slot_count) < cfg.burst_prob
    angles = rng.uniform(0.0, 2.0 * np.pi, cfg.slot_count)
    steps = (
        rng.normal(0.0, cfg.step_sigma, (n_frames, 2))
        if cfg.step_sigma > 0
        else np.zeros((n_frames, 2))
    )
    start = rng.random(2)

    jumps = np.zeros((cfg.slot_count, 2))
    if burst.any():
        jumps[burst, 0] = cfg.burst_jump * np.cos(angles[burst])
        jumps[burst, 1] = cfg.burst_jump * np.sin(angles[burst])
    # a burst displaces the slot's frames evenly: net movement is burst_jump
    deltas = steps.reshape(cfg.slot_count, f, 2) + jumps[:, None, :] / f
    pos = (start + np.cumsum(deltas.reshape(n_frames, 2), axis=0)) % 1.0

    n_drift = int(round(cfg.fp_drift * n_world))
    r2 = cfg.view_radius**2
    frames: list[Frame] = []
    for t in range(cfg.slot_count):
        if n_drift:
            moved = rng.choice(n_world, size=n_drift, replace=False)
            world[moved] = rng.random((n_drift, 2))
            world_ids[moved] = next_id + np.arange(n_drift)
            next_id += n_drift
        p = pos[t * f : (t + 1) * f]
        dx = np.abs(p[:, None, 0] - world[None, :, 0])
        np.minimum(dx, 1.0 - dx, out=dx)
        dy = np.abs(p[:, None, 1] - world[None, :, 1])
        np.minimum(dy, 1.0 - dy, out=dy)
        vis = dx * dx + dy * dy <= r2
        for i, row in enumerate(vis):
            frames.append(Frame(t * f + i, frozenset(world_ids[np.nonzero(row)[0]].tolist())))
    return FrameTrace(frames)


def label_key_frames(
    trace: FrameTrace, cfg: LabelingConfig, frames_per_slot: int = 10
) -> FrameTrace:
    """Assign ground-truth key flags with the two-threshold rule.

    Scanning in order, a frame is marked key iff its max Jaccard similarity to
    all previously marked key frames is below theta_new and at least
    theta_overlap (the very first frame is always key). If an entire slot
    passes without any frame reaching theta_overlap, tracking is considered
    lost and the next sufficiently novel frame is forced key, re-anchoring the
    map (relocalization). Existing key flags are ignored and overwritten, so
    the operation is idempotent.
    """
    cfg.validate()
    if not len(trace):
        raise ValueError("cannot label an empty trace")
    if frames_per_slot < 1:
        raise ValueError("frames_per_slot must be >= 1")

    index = SetJaccardIndex()
    labels: list[bool] = []
    force_next = False
    slot_cleared = False
    for i, frame in enumerate(trace):
        if i and i % frames_per_slot == 0:
            if not slot_cleared:
                force_next = True
            slot_cleared = False
        max_sim = index.max_jaccard(frame.fps) if len(index) else 0.0
        if max_sim >= cfg.theta_overlap:
            slot_cleared = True
        if len(index) == 0:
            key = True
        elif force_next and max_sim < cfg.theta_new:
            key = True
        else:
            key = cfg.theta_overlap <= max_sim < cfg.theta_new
        if force_next:
            force_next = False
        if key:
            index.add(frame.frame_id, frame.fps)
        labels.append(key)
    return FrameTrace([replace(f, key=k) for f, k in zip(trace, labels)])


def slotify(trace: FrameTrace, frames_per_slot: int) -> list[TraceSlot]:
    """Group a labeled trace into slots of exactly frames_per_slot frames.

    A trailing partial slot is dropped with a warning; reservation operates on
    full slots only.
    """
    if frames_per_slot <= 0:
        raise ValueError("frames_per_slot must be positive")
    if not trace.labeled:
        raise ValueError("slotify requires a labeled trace (run label_key_frames first)")
    n_full, rem = divmod(len(trace), frames_per_slot)
    if rem:
        warnings.warn(
            f"dropping {rem} trailing frame(s) that do not fill a slot of {frames_per_slot}",
            stacklevel=2,
        )
    slots: list[TraceSlot] = []
    for t in range(n_full):
        chunk = tuple(trace[t * frames_per_slot : (t + 1) * frames_per_slot])
        mask = tuple(bool(f.key) for f in chunk)
        slots.append(TraceSlot(t, chunk, mask, sum(mask)))
    return slots
