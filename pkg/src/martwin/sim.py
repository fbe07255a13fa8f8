"""End-to-end slot loop: trace -> twin -> predictor -> reservation, plus metrics.

Each slot is processed in two phases. The decision phase sees only past
revealed counts and the current slot's frame graph (never its key labels):
model switching picks a predictor, the predictor emits the expected upload
count, and the reservation rule converts it into a provisioned count,
bandwidth, and resource blocks. The reveal phase then scores the decision,
updates the confusion statistics and the experience store, and grows the map
with the slot's actual key frames.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, SimConfig
from .mapgraph import SetJaccardIndex, empty_graph, update_map
from .predictors import (
    PredictedAction,
    SimplifiedState,
    build_detailed_state,
    fit_detailed,
    fit_recurrent,
    fit_simplified,
    poisson_reserve,
    predict_detailed,
    predict_simplified,
    recurrent_baseline_predict,
)
from .reservation import quantize_rbs, reserve_bandwidth
from .reservation import decide as reserve_decide
from .trace import FrameTrace, generate_trace, label_key_frames, load_trace, slotify
from .twin import (
    STAT_CLAMP_HI,
    STAT_CLAMP_LO,
    ConfusionStats,
    UserProfile,
    msf_step,
    new_profile,
    record_experience,
    update_confusion,
)

CSV_HEADER = "t,k_true,A_hat,h,N_star,b_star_hz,rb_count,violated,over_rbs,p,q,lambda"


@dataclass(frozen=True)
class SlotRecord:
    t: int
    k_true: int
    a_hat: int
    h: int                  # 1 when the detailed model produced the prediction
    n_star: int
    b_star_hz: float
    rb_count: int
    violated: bool
    over_frames: int
    over_rbs: int
    p: float
    q: float
    lam: float


@dataclass(frozen=True)
class SummaryMetrics:
    slots: int
    total_rbs: int
    total_over_provision_rbs: int
    violation_rate: float
    empirical_reliability: float
    mean_abs_count_err: float
    burst_mean_abs_count_err: float | None = None
    measured_p: float | None = None
    measured_q: float | None = None
    measured_lambda: float | None = None


@dataclass
class SimResult:
    records: list[SlotRecord]          # every slot, warm-up included
    metrics: SummaryMetrics            # aggregated over post-warm-up slots only
    profile: UserProfile
    counts: list[int]
    warmup_slots: int
    params_detailed: object = None     # ModelParams after the final refit
    params_simplified: object = None


def compute_metrics(records, burst_threshold: float | None = None) -> SummaryMetrics:
    """Aggregate slot records; errors on an empty input."""
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    total_rbs = sum(r.rb_count for r in records)
    total_over = sum(r.over_rbs for r in records)
    violations = sum(1 for r in records if r.violated)
    violation_rate = violations / len(records)
    mae = float(np.mean([abs(r.a_hat - r.k_true) for r in records]))
    burst_mae = None
    if burst_threshold is not None:
        burst = [abs(r.a_hat - r.k_true) for r in records if r.k_true > burst_threshold]
        if burst:
            burst_mae = float(np.mean(burst))
    return SummaryMetrics(
        slots=len(records),
        total_rbs=total_rbs,
        total_over_provision_rbs=total_over,
        violation_rate=violation_rate,
        empirical_reliability=1.0 - violation_rate,
        mean_abs_count_err=mae,
        burst_mean_abs_count_err=burst_mae,
    )


def emit_csv(records, path) -> None:
    """Write slot records with the fixed column schema (floats via repr)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in records:
            fh.write(
                f"{r.t},{r.k_true},{r.a_hat},{r.h},{r.n_star},{r.b_star_hz!r},"
                f"{r.rb_count},{int(r.violated)},{r.over_rbs},{r.p!r},{r.q!r},{r.lam!r}\n"
            )


def parse_csv(path) -> list[SlotRecord]:
    """Read an emit_csv file back into slot records."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header: {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            c = line.split(",")
            t, k, a, h, n = int(c[0]), int(c[1]), int(c[2]), int(c[3]), int(c[4])
            records.append(
                SlotRecord(
                    t=t, k_true=k, a_hat=a, h=h, n_star=n,
                    b_star_hz=float(c[5]), rb_count=int(c[6]),
                    violated=bool(int(c[7])), over_frames=max(0, n - k),
                    over_rbs=int(c[8]), p=float(c[9]), q=float(c[10]), lam=float(c[11]),
                )
            )
    return records


def _load_or_generate(cfg: SimConfig) -> FrameTrace:
    f = cfg.radio.frames_per_slot
    if cfg.sim.trace:
        return load_trace(cfg.sim.trace, frames_per_slot=f)
    return generate_trace(cfg.generator)


def _simplified_window(counts: list[int], t_w: int) -> SimplifiedState:
    hist = counts[-t_w:]
    return SimplifiedState(tuple([0] * (t_w - len(hist)) + hist))


def _persistence_action(counts: list[int], f: int) -> PredictedAction:
    last = min(f, counts[-1] if counts else 0)
    return PredictedAction.from_count(last, f, rate=last / f)


def _pooled_stats(truths, preds, beta: float) -> ConfusionStats:
    tp = fn = tn = fp = 0
    pos = tot = 0
    for t, a in zip(truths, preds):
        tp += int(np.sum(t & a))
        fn += int(np.sum(t & ~a))
        tn += int(np.sum(~t & ~a))
        fp += int(np.sum(~t & a))
        pos += int(np.sum(t))
        tot += len(t)

    def clamp(v: float) -> float:
        return min(STAT_CLAMP_HI, max(STAT_CLAMP_LO, v))

    p = clamp(tp / (tp + fn)) if tp + fn else ConfusionStats().p
    q = clamp(tn / (tn + fp)) if tn + fp else ConfusionStats().q
    lam = clamp(pos / tot) if tot else ConfusionStats().lam
    return ConfusionStats(p, q, lam, beta)


def run_full(config, trace: FrameTrace | None = None, init_models: dict | None = None) -> SimResult:
    """Run the complete simulation; see run_simulation for the public contract.

    `init_models` may carry pre-trained "detailed" / "simplified" ModelParams
    to warm-start the predictors (they are then usable from the first slot and
    seed every refit).
    """
    if isinstance(config, (str, Path)):
        from .config import parse_config

        config = parse_config(config)
    cfg: SimConfig = config
    cfg.validate()
    f = cfg.radio.frames_per_slot

    if trace is None:
        trace = _load_or_generate(cfg)
    if not trace.labeled:
        trace = label_key_frames(trace, cfg.labeling, frames_per_slot=f)
    slots = slotify(trace, f)
    if cfg.sim.max_slots:
        slots = slots[: cfg.sim.max_slots]
    warmup = cfg.sim.warmup_slots
    if len(slots) <= warmup:
        raise ConfigError(
            f"trace provides {len(slots)} slots; need more than sim.warmup_slots={warmup}"
        )

    profile = new_profile(
        capacity=cfg.twin.capacity,
        switch_threshold=cfg.twin.switch_threshold,
        switch_patience=cfg.twin.switch_patience,
        window_slots=cfg.twin.window_slots,
        ewma_beta=cfg.twin.ewma_beta,
        labeling=cfg.labeling,
    )
    store = profile.user_oriented.store
    map_graph = empty_graph()
    index = SetJaccardIndex()
    init_models = init_models or {}
    params_d = init_models.get("detailed")
    params_s = init_models.get("simplified")
    counts: list[int] = []
    truths: list[np.ndarray] = []
    preds: list[np.ndarray] = []
    records: list[SlotRecord] = []

    for t, slot in enumerate(slots):
        if t >= warmup and (t - warmup) % cfg.twin.refit_every == 0 and len(store):
            params_d = fit_detailed(store, cfg.twin.epochs, cfg.twin.lr, init=params_d)
            params_s = fit_simplified(
                store, cfg.twin.window_slots, cfg.twin.epochs, cfg.twin.lr, init=params_s
            )

        # ---- decision phase: nothing below reads this slot's key labels ----
        conf = profile.configuration_oriented
        if t == 0:
            h = conf.switch.h
        else:
            k_prev = counts[-1]
            k_prev2 = counts[-2] if len(counts) >= 2 else 0
            h, conf.switch = msf_step(
                conf.switch, k_prev, k_prev2, conf.switch_threshold, conf.switch_patience
            )

        s_d = build_detailed_state(map_graph, slot.frames, index=index)
        s_s = _simplified_window(counts, conf.window_slots)

        if cfg.twin.force_model == "detailed":
            route = "detailed"
        elif cfg.twin.force_model == "simplified":
            route = "simplified"
        elif t < warmup:
            route = "simplified"
        else:
            route = "detailed" if h == 1 else "simplified"

        if route == "detailed" and params_d is not None:
            pred = predict_detailed(params_d, s_d)
            h_used = 1
        elif route == "simplified" and params_s is not None:
            pred = predict_simplified(params_s, s_s)
            h_used = 0
        else:
            pred = _persistence_action(counts, f)
            h_used = 0

        stats = profile.management_oriented.stats
        decision = reserve_decide(f, pred.count, stats, cfg.radio, cfg.rb)

        # ---- reveal phase ----
        k_true = slot.key_count
        truth = np.asarray(slot.key_mask, dtype=bool)
        over_frames = max(0, decision.n_star - k_true)
        over_rbs = max(
            0, decision.rb_count - quantize_rbs(reserve_bandwidth(k_true, cfg.radio), cfg.rb)
        )
        records.append(
            SlotRecord(
                t=t, k_true=k_true, a_hat=pred.count, h=h_used,
                n_star=decision.n_star, b_star_hz=decision.b_star_hz,
                rb_count=decision.rb_count, violated=k_true > decision.n_star,
                over_frames=over_frames, over_rbs=over_rbs,
                p=stats.p, q=stats.q, lam=stats.lam,
            )
        )

        profile.management_oriented.stats = update_confusion(stats, truth, pred.mask)
        record_experience(profile, replace(s_d, map_graph=None), s_s, truth, pred)
        counts.append(k_true)
        truths.append(truth)
        preds.append(np.asarray(pred.mask, dtype=bool))

        new_keys = [fr for fr, is_key in zip(slot.frames, slot.key_mask) if is_key]
        if new_keys:
            map_graph, culled = update_map(map_graph, new_keys, cfg.map)
            for fr in new_keys:
                index.add(fr.frame_id, fr.fps)
            for fid in culled:
                if fid in index:
                    index.remove(fid)

    measured = _pooled_stats(truths[warmup:], preds[warmup:], cfg.twin.ewma_beta)
    if cfg.twin.stats_mode == "pinned":
        pinned = []
        for r in records:
            d = reserve_decide(f, r.a_hat, measured, cfg.radio, cfg.rb)
            over_rbs = max(
                0, d.rb_count - quantize_rbs(reserve_bandwidth(r.k_true, cfg.radio), cfg.rb)
            )
            pinned.append(
                replace(
                    r, n_star=d.n_star, b_star_hz=d.b_star_hz, rb_count=d.rb_count,
                    violated=r.k_true > d.n_star, over_frames=max(0, d.n_star - r.k_true),
                    over_rbs=over_rbs, p=measured.p, q=measured.q, lam=measured.lam,
                )
            )
        records = pinned

    metrics = compute_metrics(records[warmup:], burst_threshold=cfg.twin.switch_threshold)
    metrics = replace(
        metrics, measured_p=measured.p, measured_q=measured.q, measured_lambda=measured.lam
    )
    return SimResult(records, metrics, profile, counts, warmup, params_d, params_s)


def run_simulation(config, trace: FrameTrace | None = None):
    """Run the slot loop; returns (records for every slot, post-warm-up metrics).

    `config` is a SimConfig or a path to a key=value config file. Decisions for
    slot t are made strictly before its labels are revealed, and the whole run
    is a deterministic function of (config, seed).
    """
    result = run_full(config, trace=trace)
    return result.records, result.metrics


def _baseline_records(slots, n_for_slot, pred_for_slot, cfg: SimConfig) -> list[SlotRecord]:
    records = []
    counts: list[int] = []
    f = cfg.radio.frames_per_slot
    for t, slot in enumerate(slots):
        n, a_hat = n_for_slot(t, counts), pred_for_slot(t, counts)
        b = reserve_bandwidth(n, cfg.radio)
        rb = quantize_rbs(b, cfg.rb)
        k_true = slot.key_count
        over_rbs = max(0, rb - quantize_rbs(reserve_bandwidth(k_true, cfg.radio), cfg.rb))
        records.append(
            SlotRecord(
                t=t, k_true=k_true, a_hat=a_hat, h=0, n_star=n, b_star_hz=b,
                rb_count=rb, violated=k_true > n, over_frames=max(0, n - k_true),
                over_rbs=over_rbs, p=0.0, q=0.0, lam=0.0,
            )
        )
        counts.append(k_true)
    return records


@dataclass
class MethodResult:
    records: list[SlotRecord]
    metrics: SummaryMetrics


def compare_baselines(config, trace: FrameTrace | None = None) -> dict[str, MethodResult]:
    """Run the twin pipeline, Poisson regression, and the recurrent count
    baseline on the identical labeled trace and seed.

    The Poisson baseline reserves its epsilon-quantile count directly; the
    recurrent baseline reserves exactly its predicted count (no robustness
    margin). All methods share the warm-up exclusion.
    """
    if isinstance(config, (str, Path)):
        from .config import parse_config

        config = parse_config(config)
    cfg: SimConfig = config
    cfg.validate()
    f = cfg.radio.frames_per_slot

    if trace is None:
        trace = _load_or_generate(cfg)
    if not trace.labeled:
        trace = label_key_frames(trace, cfg.labeling, frames_per_slot=f)

    mudt = run_full(cfg, trace=trace)
    slots = slotify(trace, f)
    if cfg.sim.max_slots:
        slots = slots[: cfg.sim.max_slots]
    warmup = cfg.sim.warmup_slots
    burst_thr = cfg.twin.switch_threshold
    eps = cfg.radio.epsilon

    # Poisson regression: epsilon-quantile of a Poisson at the historical mean
    def poisson_n(t, counts):
        return poisson_reserve(counts, eps) if counts else 0

    def poisson_pred(t, counts):
        return int(round(float(np.mean(counts)))) if counts else 0

    poisson_records = _baseline_records(slots, poisson_n, poisson_pred, cfg)

    # recurrent count predictor, refit periodically on the revealed history
    rec_state = {"params": None}

    def rec_pred(t, counts):
        if (
            t >= warmup
            and (t - warmup) % cfg.sim.baseline_refit_every == 0
            and counts
        ):
            rec_state["params"] = fit_recurrent(
                counts,
                t_w=cfg.twin.window_slots,
                frames_per_slot=f,
                hidden=cfg.sim.recurrent_hidden,
                epochs=cfg.sim.recurrent_epochs,
                lr=cfg.twin.lr,
                seed=cfg.sim.seed,
                init=rec_state["params"],
            )
        if rec_state["params"] is None:
            return min(f, counts[-1] if counts else 0)
        return recurrent_baseline_predict(counts, rec_state["params"])

    rec_cache: dict[int, int] = {}

    def rec_n(t, counts):
        rec_cache[t] = rec_pred(t, counts)
        return rec_cache[t]

    recurrent_records = _baseline_records(slots, rec_n, lambda t, counts: rec_cache[t], cfg)

    out = {
        "mudt": MethodResult(mudt.records, mudt.metrics),
        "poisson": MethodResult(
            poisson_records, compute_metrics(poisson_records[warmup:], burst_thr)
        ),
        "recurrent": MethodResult(
            recurrent_records, compute_metrics(recurrent_records[warmup:], burst_thr)
        ),
    }
    return out
