"""Data-driven approximators of the key-frame uploading policy.

Two switchable models predict which of the F frames in the upcoming slot will
be uploaded: a detailed per-frame scorer over graph-derived features (slot
frame graph plus cross weights to the 3D map) and a simplified scorer over the
recent per-slot count window. Both are trained by plain gradient descent on
the squared error between predicted scores and the binary upload mask. A
persistence-with-decay link predictor for slot-graph edge weights and the two
comparison baselines (Poisson quantile, toy recurrent count predictor) live
here as well.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mapgraph import WeightedFrameGraph, build_graph, jaccard

N_FEATURES = 8


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass(frozen=True)
class PredictedAction:
    """Per-frame upload prediction for one slot: scores, mask, and count."""

    scores: np.ndarray
    mask: np.ndarray
    count: int

    def __post_init__(self) -> None:
        if len(self.scores) != len(self.mask):
            raise ValueError("scores and mask must have equal length")
        if np.any(self.scores < 0.0) or np.any(self.scores > 1.0):
            raise ValueError("scores must lie in [0, 1]")
        if self.count != int(np.sum(self.mask)):
            raise ValueError("count must equal the number of positive mask entries")

    @staticmethod
    def from_scores(scores: np.ndarray) -> "PredictedAction":
        scores = np.asarray(scores, dtype=float)
        mask = scores >= 0.5  # a tie at exactly 0.5 counts as positive
        return PredictedAction(scores, mask, int(mask.sum()))

    @staticmethod
    def from_count(count: int, frames_per_slot: int, rate: float) -> "PredictedAction":
        """Count-level prediction: the last `count` frame positions are marked.

        Positions are immaterial to the reservation (it consumes the count
        only), so they are synthesized deterministically.
        """
        if not 0 <= count <= frames_per_slot:
            raise ValueError("count must lie in [0, frames_per_slot]")
        mask = np.zeros(frames_per_slot, dtype=bool)
        if count:
            mask[frames_per_slot - count :] = True
        scores = np.full(frames_per_slot, min(1.0, max(0.0, rate)))
        return PredictedAction(scores, mask, count)


@dataclass(frozen=True)
class DetailedState:
    """Graph state for detailed modeling: previous map, slot graph, cross weights.

    Slot frames are ordered by ascending frame_id, which is chronological
    order. `cross_weights[i, j]` is the Jaccard weight between slot frame i
    and map node `map_ids[j]`. The map graph itself may be dropped (None) on
    stored records; the scorer consumes the map only through cross_weights.
    """

    map_graph: WeightedFrameGraph | None
    slot_graph: WeightedFrameGraph
    cross_weights: np.ndarray
    map_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        f = len(self.slot_graph)
        if f < 1:
            raise ValueError("slot_graph must contain at least one frame")
        if self.cross_weights.shape != (f, len(self.map_ids)):
            raise ValueError("cross_weights shape must be (F, number of map nodes)")


@dataclass(frozen=True)
class SimplifiedState:
    """Count window of the preceding slots, zero-padded at the trace start."""

    window: tuple[int, ...]


@dataclass
class ExperienceRecord:
    seq: int
    detailed: DetailedState
    simplified: SimplifiedState
    truth: np.ndarray
    _feat: np.ndarray | None = field(default=None, repr=False)
    _adj: np.ndarray | None = field(default=None, repr=False)


class ExperienceStore:
    """Chronological ring buffer of (state, ground-truth mask) records."""

    def __init__(self, capacity: int = 2000) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.records: deque[ExperienceRecord] = deque(maxlen=capacity)
        self._next_seq = 0

    def append(
        self, detailed: DetailedState, simplified: SimplifiedState, truth
    ) -> ExperienceRecord:
        rec = ExperienceRecord(self._next_seq, detailed, simplified, np.asarray(truth, dtype=bool))
        self._next_seq += 1
        self.records.append(rec)
        return rec

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass
class ModelParams:
    """Trained parameters plus feature normalization constants."""

    kind: str
    values: dict[str, np.ndarray]

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind}
        for name, arr in self.values.items():
            out[name] = np.asarray(arr, dtype=float).ravel().tolist()
        return out

    @staticmethod
    def from_json(obj: dict) -> "ModelParams":
        kind = obj["kind"]
        values = {k: np.asarray(v, dtype=float) for k, v in obj.items() if k != "kind"}
        if kind == "recurrent" and "wh" in values:
            h = len(values["bh"])
            values["wh"] = values["wh"].reshape(h, h)
        return ModelParams(kind, values)


def _require_params(params, kind: str):
    if params is None or not isinstance(params, ModelParams) or params.kind != kind:
        raise ValueError(f"unfitted or wrong-kind parameters (expected {kind!r})")
    return params


def build_detailed_state(
    map_graph: WeightedFrameGraph, frames: Sequence, index=None
) -> DetailedState:
    """Assemble the detailed state for a slot.

    When a SetJaccardIndex over the map nodes is supplied it answers the cross
    weights; otherwise they are computed directly.
    """
    slot_graph = build_graph(frames)
    if index is not None:
        cw, ids = index.weights_matrix([f.fps for f in frames])
        return DetailedState(map_graph, slot_graph, cw, ids)
    ids = tuple(map_graph.node_ids())
    if ids:
        cw = np.array(
            [[jaccard(f.fps, map_graph.nodes[g].fps) for g in ids] for f in frames]
        )
    else:
        cw = np.zeros((len(frames), 0))
    return DetailedState(map_graph, slot_graph, cw, ids)


def detailed_features(state: DetailedState, positives) -> np.ndarray:
    """Per-frame feature matrix (F, 8) for the detailed scorer.

    Columns: max / mean cross weight to the map, max / mean weight to the other
    slot frames, max weight to earlier slot frames flagged in `positives`
    (ground truth while fitting, the scorer's own picks at inference), the slot
    position index / F, the combined novelty signal max(col 0, col 4), and its
    square. The quadratic term lets the affine head carve out a similarity
    band (novel enough to upload, overlapping enough to anchor), which a
    purely linear response cannot express.
    """
    ids = state.slot_graph.node_ids()
    f = len(ids)
    a = state.slot_graph.adjacency(ids)
    return _features_from_parts(state.cross_weights, a, positives)


def _features_from_parts(cw: np.ndarray, adj: np.ndarray, positives) -> np.ndarray:
    f = adj.shape[0]
    if cw.size:
        f1 = cw.max(axis=1)
        f2 = cw.mean(axis=1)
    else:
        f1 = np.zeros(f)
        f2 = np.zeros(f)
    if f > 1:
        f3 = adj.max(axis=1)
        f4 = adj.sum(axis=1) / (f - 1)
    else:
        f3 = np.zeros(f)
        f4 = np.zeros(f)
    f5 = np.zeros(f)
    pos = np.asarray(positives, dtype=bool)
    for i in range(1, f):
        m = pos[:i]
        if m.any():
            f5[i] = adj[i, :i][m].max()
    f6 = np.arange(f) / f
    f7 = np.maximum(f1, f5)
    return np.stack([f1, f2, f3, f4, f5, f6, f7, f7 * f7], axis=1)


def _smooth_features(x: np.ndarray, adj: np.ndarray) -> np.ndarray:
    # one round of neighbor-mean message passing over the slot graph
    deg = adj.sum(axis=1, keepdims=True)
    neigh = (adj @ x) / np.maximum(deg, 1e-12)
    return 0.5 * (x + neigh)


def detailed_loss_grad(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray):
    """Mean per-record squared error of sigmoid scores vs binary masks.

    x: standardized features (R, F, K); y: masks (R, F). Returns the loss and
    its analytic gradient w.r.t. (w, b).
    """
    z = x @ w + b
    s = _sigmoid(z)
    diff = s - y
    n = x.shape[0]
    loss = float(np.sum(diff * diff) / n)
    dz = 2.0 * diff * s * (1.0 - s) / n
    gw = np.einsum("rfk,rf->k", x, dz)
    gb = float(np.sum(dz))
    return loss, gw, gb


def simplified_loss_grad(w: np.ndarray, b: float, x: np.ndarray, k: np.ndarray, f: int):
    """Loss of the count-window scorer, same squared-error shape per record.

    The scorer emits one shared score s per slot; against a mask with k
    positives the squared error is k(1-s)^2 + (F-k)s^2.
    """
    z = x @ w + b
    s = _sigmoid(z)
    n = x.shape[0]
    loss = float(np.sum(k * (1.0 - s) ** 2 + (f - k) * s * s) / n)
    dz = (2.0 * (f * s - k) / n) * s * (1.0 - s)
    gw = x.T @ dz
    gb = float(np.sum(dz))
    return loss, gw, gb


def _gd(loss_grad, xs: list[np.ndarray], epochs: int, lr: float):
    """Plain gradient descent with halving backtracking.

    Only non-increasing steps are accepted, so the final loss never exceeds
    the initial one. Stops early once improvements fall below float noise
    (warm-started refits converge in a handful of epochs).
    """
    loss, grads = loss_grad(xs)
    step = lr
    for _ in range(epochs):
        trial = [x - step * g for x, g in zip(xs, grads)]
        new_loss, new_grads = loss_grad(trial)
        tries = 0
        while new_loss > loss and tries < 30:
            step *= 0.5
            trial = [x - step * g for x, g in zip(xs, grads)]
            new_loss, new_grads = loss_grad(trial)
            tries += 1
        if new_loss > loss:
            break
        improved = loss - new_loss
        xs, loss, grads = trial, new_loss, new_grads
        step *= 1.1
        if improved <= 1e-12 * max(1.0, abs(loss)):
            break
    return xs, loss


def _training_matrices(store: ExperienceStore, smooth: bool):
    feats = []
    ys = []
    for rec in store:
        if rec._feat is None:
            ids = rec.detailed.slot_graph.node_ids()
            rec._adj = rec.detailed.slot_graph.adjacency(ids)
            rec._feat = _features_from_parts(rec.detailed.cross_weights, rec._adj, rec.truth)
        x = _smooth_features(rec._feat, rec._adj) if smooth else rec._feat
        feats.append(x)
        ys.append(rec.truth.astype(float))
    return np.stack(feats), np.stack(ys)


def fit_detailed(
    store: ExperienceStore,
    epochs: int = 300,
    lr: float = 0.05,
    init: ModelParams | None = None,
    smooth: bool = False,
) -> ModelParams:
    """Fit the detailed per-frame scorer on the stored experience.

    Earlier-frame positivity features are teacher-forced from the recorded
    ground truth. Passing `init` warm-starts from previous parameters (and
    reuses their normalization constants).
    """
    if len(store) == 0:
        raise ValueError("experience store is empty")
    x, y = _training_matrices(store, smooth)
    if init is not None and init.kind == "detailed":
        mu = init.values["mu"]
        sigma = init.values["sigma"]
        w0 = init.values["w"].copy()
        b0 = init.values["b"].copy()
    else:
        flat = x.reshape(-1, N_FEATURES)
        mu = flat.mean(axis=0)
        sigma = np.maximum(flat.std(axis=0), 1e-6)
        w0 = np.zeros(N_FEATURES)
        b0 = np.zeros(1)
    xs = (x - mu) / sigma

    def lg(ps):
        loss, gw, gb = detailed_loss_grad(ps[0], float(ps[1][0]), xs, y)
        return loss, [gw, np.array([gb])]

    (w, b), _ = _gd(lg, [w0, b0], epochs, lr)
    return ModelParams(
        "detailed",
        {"w": w, "b": b, "mu": mu, "sigma": sigma, "smooth": np.array([1.0 if smooth else 0.0])},
    )


def predict_detailed(params: ModelParams, state: DetailedState) -> PredictedAction:
    """Score each slot frame in order; mask = scores >= 0.5.

    The earlier-positive feature depends on the scorer's own prior picks, so
    frames are scored sequentially; only that feature (and the derived novelty
    columns) changes between frames.
    """
    _require_params(params, "detailed")
    ids = state.slot_graph.node_ids()
    f = len(ids)
    adj = state.slot_graph.adjacency(ids)
    w = params.values["w"]
    b = float(params.values["b"][0])
    mu = params.values["mu"]
    sigma = params.values["sigma"]
    smooth = bool(params.values.get("smooth", np.zeros(1))[0])

    positives = np.zeros(f, dtype=bool)
    scores = np.zeros(f)
    if smooth:
        # neighbor-mean mixing couples rows, so rebuild the matrix per frame
        for i in range(f):
            feats = _smooth_features(_features_from_parts(state.cross_weights, adj, positives), adj)
            s = float(_sigmoid((feats[i] - mu) / sigma @ w + b))
            scores[i] = s
            positives[i] = s >= 0.5
        return PredictedAction.from_scores(scores)

    base = _features_from_parts(state.cross_weights, adj, positives)
    for i in range(f):
        xi = base[i].copy()
        if i:
            m = positives[:i]
            xi[4] = adj[i, :i][m].max() if m.any() else 0.0
        eff = max(xi[0], xi[4])
        xi[6] = eff
        xi[7] = eff * eff
        s = float(_sigmoid((xi - mu) / sigma @ w + b))
        scores[i] = s
        positives[i] = s >= 0.5
    return PredictedAction.from_scores(scores)


def _window_matrix(store: ExperienceStore, t_w: int):
    xs = []
    ks = []
    f = None
    for rec in store:
        if len(rec.simplified.window) != t_w:
            raise ValueError(
                f"record window length {len(rec.simplified.window)} != T_w {t_w}"
            )
        xs.append(rec.simplified.window)
        ks.append(int(rec.truth.sum()))
        f = len(rec.truth)
    return np.asarray(xs, dtype=float), np.asarray(ks, dtype=float), f


def fit_simplified(
    store: ExperienceStore,
    t_w: int = 5,
    epochs: int = 300,
    lr: float = 0.05,
    init: ModelParams | None = None,
) -> ModelParams:
    """Fit the count-window scorer (one shared score per slot)."""
    if len(store) == 0:
        raise ValueError("experience store is empty")
    x, k, f = _window_matrix(store, t_w)
    x = x / f
    if init is not None and init.kind == "simplified" and len(init.values["w"]) == t_w:
        w0 = init.values["w"].copy()
        b0 = init.values["b"].copy()
    else:
        w0 = np.zeros(t_w)
        b0 = np.zeros(1)

    def lg(ps):
        loss, gw, gb = simplified_loss_grad(ps[0], float(ps[1][0]), x, k, f)
        return loss, [gw, np.array([gb])]

    (w, b), _ = _gd(lg, [w0, b0], epochs, lr)
    return ModelParams(
        "simplified", {"w": w, "b": b, "f": np.array([float(f)]), "t_w": np.array([float(t_w)])}
    )


def predict_simplified(params: ModelParams, state: SimplifiedState) -> PredictedAction:
    """Predict the slot count first, then synthesize mask positions (last-count rule)."""
    _require_params(params, "simplified")
    f = int(params.values["f"][0])
    t_w = int(params.values["t_w"][0])
    if len(state.window) != t_w:
        raise ValueError(f"window length {len(state.window)} != T_w {t_w}")
    x = np.asarray(state.window, dtype=float) / f
    s = float(_sigmoid(x @ params.values["w"] + params.values["b"][0]))
    count = int(min(f, max(0, math.floor(f * s + 0.5))))
    return PredictedAction.from_count(count, f, rate=s)


def predict_transition(
    g_prev: WeightedFrameGraph, rho: float = 0.9, cn_weight: float = 0.0
) -> WeightedFrameGraph:
    """Predict next-slot edge weights: decayed persistence, optionally blended
    with a common-neighbor score (mean product of weights through shared
    neighbors). The node set carries over; with rho=1 and cn_weight=0 the edge
    weights are returned unchanged.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    if not 0.0 <= cn_weight <= 1.0:
        raise ValueError("cn_weight must lie in [0, 1]")
    ids = g_prev.node_ids()
    n = len(ids)
    w = g_prev.adjacency(ids)
    if cn_weight > 0.0 and n > 2:
        cn = (w @ w) / (n - 2)
        blended = (1.0 - cn_weight) * w + cn_weight * cn
    else:
        blended = w if cn_weight == 0.0 else (1.0 - cn_weight) * w
    out = rho * blended
    edges: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            if out[i, j] > 0.0:
                edges[(ids[i], ids[j])] = float(out[i, j])
    return WeightedFrameGraph(dict(g_prev.nodes), edges)


def poisson_reserve(history: Sequence[int], epsilon: float) -> int:
    """Smallest n whose Poisson CDF at the historical mean reaches epsilon."""
    if len(history) == 0:
        raise ValueError("history must be non-empty")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    lam = float(np.mean(history))
    if lam <= 0.0:
        return 0
    pmf = math.exp(-lam)
    cdf = pmf
    n = 0
    while cdf < epsilon:
        n += 1
        pmf *= lam / n
        cdf += pmf
        if n > 1_000_000:  # unreachable for slot-scale rates; guards float stalls
            raise RuntimeError("poisson quantile search did not converge")
    return n


def recurrent_loss_grad(values: dict[str, np.ndarray], x: np.ndarray, k: np.ndarray, f: int):
    """Loss and full BPTT gradient of the toy recurrent count scorer.

    x: count windows scaled by F (R, T); k: true counts (R,). The network is a
    single tanh recurrence over the window followed by a sigmoid readout of
    the per-frame rate.
    """
    wx, wh, bh = values["wx"], values["wh"], values["bh"]
    v, c = values["v"], values["c"]
    r, t = x.shape
    h = len(bh)
    hs = []
    h_prev = np.zeros((r, h))
    for step in range(t):
        h_prev = np.tanh(x[:, step : step + 1] * wx[None, :] + h_prev @ wh + bh)
        hs.append(h_prev)
    s = _sigmoid(hs[-1] @ v + c[0])
    loss = float(np.sum(k * (1.0 - s) ** 2 + (f - k) * s * s) / r)

    dzo = (2.0 * (f * s - k) / r) * s * (1.0 - s)
    gv = hs[-1].T @ dzo
    gc = np.array([float(np.sum(dzo))])
    dh = np.outer(dzo, v)
    gwx = np.zeros(h)
    gwh = np.zeros((h, h))
    gbh = np.zeros(h)
    for step in reversed(range(t)):
        dpre = dh * (1.0 - hs[step] ** 2)
        gwx += (x[:, step : step + 1] * dpre).sum(axis=0)
        h_before = hs[step - 1] if step > 0 else np.zeros((r, h))
        gwh += h_before.T @ dpre
        gbh += dpre.sum(axis=0)
        dh = dpre @ wh.T
    return loss, {"wx": gwx, "wh": gwh, "bh": gbh, "v": gv, "c": gc}


def _windows_from_counts(counts: Sequence[int], t_w: int) -> np.ndarray:
    rows = []
    for i in range(len(counts)):
        lo = max(0, i - t_w)
        win = [0] * (t_w - (i - lo)) + list(counts[lo:i])
        rows.append(win)
    return np.asarray(rows, dtype=float)


def fit_recurrent(
    counts: Sequence[int],
    t_w: int = 5,
    frames_per_slot: int = 10,
    hidden: int = 4,
    epochs: int = 300,
    lr: float = 0.05,
    seed: int = 0,
    init: ModelParams | None = None,
) -> ModelParams:
    """Fit the recurrent count baseline on a per-slot count history."""
    counts = list(counts)
    if not counts:
        raise ValueError("count history must be non-empty")
    f = frames_per_slot
    x = _windows_from_counts(counts, t_w) / f
    k = np.asarray(counts, dtype=float)
    if init is not None and init.kind == "recurrent":
        values = {name: arr.copy() for name, arr in init.values.items() if name not in ("f", "t_w")}
    else:
        rng = np.random.default_rng(seed)
        values = {
            "wx": rng.normal(0.0, 0.1, hidden),
            "wh": rng.normal(0.0, 0.1, (hidden, hidden)),
            "bh": np.zeros(hidden),
            "v": rng.normal(0.0, 0.1, hidden),
            "c": np.zeros(1),
        }
    names = ["wx", "wh", "bh", "v", "c"]

    def lg(ps):
        vals = dict(zip(names, ps))
        loss, grads = recurrent_loss_grad(vals, x, k, f)
        return loss, [grads[n] for n in names]

    fitted, _ = _gd(lg, [values[n] for n in names], epochs, lr)
    out = dict(zip(names, fitted))
    out["f"] = np.array([float(f)])
    out["t_w"] = np.array([float(t_w)])
    return ModelParams("recurrent", out)


def recurrent_baseline_predict(history: Sequence[int], params: ModelParams) -> int:
    """Predicted key-frame count for the next slot from the recent history."""
    _require_params(params, "recurrent")
    f = int(params.values["f"][0])
    t_w = int(params.values["t_w"][0])
    hist = list(history)[-t_w:]
    win = [0] * (t_w - len(hist)) + hist
    x = np.asarray(win, dtype=float) / f
    h = np.zeros(len(params.values["bh"]))
    for step in range(t_w):
        h = np.tanh(x[step] * params.values["wx"] + h @ params.values["wh"] + params.values["bh"])
    s = float(_sigmoid(h @ params.values["v"] + params.values["c"][0]))
    return int(min(f, max(0, math.floor(f * s + 0.5))))
