"""Robust spectrum reservation under predictor uncertainty.

Given a predicted key-frame count for the upcoming slot and the tracked
accuracy statistics (p, q, lambda), the conditional distribution of the actual
count is the sum of two independent binomials: one over the predicted-positive
frames with success probability p_tpr (the Bayes posterior that a predicted
key frame is real) and one over the predicted-negative frames with success
probability 1 - p_tnr. The reservation picks the smallest count whose CDF
clears the required reliability, then converts it to Shannon-rate bandwidth
and whole resource blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .twin import ConfusionStats


@dataclass(frozen=True)
class RadioConfig:
    """Uplink radio model: per-frame payload, deadline, SNR, reliability."""

    alpha_bits: float = 5e6          # bits per key-frame upload
    t_r_s: float = 0.02              # max tolerable total transmission duration
    gamma_db: float = 15.0           # predicted SNR
    epsilon: float = 0.9             # required reliability
    frames_per_slot: int = 10
    slot_duration_s: float = 10.0 / 30.0

    def validate(self) -> None:
        if self.alpha_bits <= 0:
            raise ValueError("alpha_bits must be positive")
        if self.t_r_s <= 0:
            raise ValueError("t_r_s must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.frames_per_slot < 1:
            raise ValueError("frames_per_slot must be >= 1")
        if self.t_r_s > self.slot_duration_s:
            raise ValueError("t_r_s cannot exceed the slot duration")


@dataclass(frozen=True)
class RBSpec:
    """Resource-block geometry: 180 kHz (12 subcarriers) by 0.5 ms."""

    rb_bandwidth_hz: float = 180_000.0
    rb_duration_s: float = 0.0005

    def validate(self) -> None:
        if self.rb_bandwidth_hz <= 0 or self.rb_duration_s <= 0:
            raise ValueError("resource block dimensions must be positive")


@dataclass(frozen=True)
class ReservationDecision:
    n_star: int
    b_star_hz: float
    rb_count: int
    g_at_n_star: float


def posterior_rates(p: float, q: float, lam: float) -> tuple[float, float]:
    """Bayes posteriors of the predictor (precision and negative predictive value).

    p_tpr = P(frame is key | predicted key), p_tnr = P(not key | predicted not).
    Inputs must be in (0, 1); the twin's clamping guarantees that upstream.
    """
    for name, v in (("p", p), ("q", q), ("lam", lam)):
        if not 0.0 < v < 1.0:
            raise ValueError(f"{name} must lie strictly in (0, 1)")
    p_tpr = p * lam / (p * lam + (1.0 - q) * (1.0 - lam))
    p_tnr = q * (1.0 - lam) / (q * (1.0 - lam) + (1.0 - p) * lam)
    return p_tpr, p_tnr


def _binom_pmf_vector(n: int, prob: float) -> np.ndarray:
    """PMF of Binomial(n, prob) over 0..n; log-space, exact at prob in {0, 1}."""
    if n == 0:
        return np.ones(1)
    if prob <= 0.0:
        out = np.zeros(n + 1)
        out[0] = 1.0
        return out
    if prob >= 1.0:
        out = np.zeros(n + 1)
        out[n] = 1.0
        return out
    k = np.arange(n + 1)
    lg_n = math.lgamma(n + 1)
    lg_k = np.array([math.lgamma(x + 1) for x in k])
    lg_nk = np.array([math.lgamma(n - x + 1) for x in k])
    logpmf = lg_n - lg_k - lg_nk + k * math.log(prob) + (n - k) * math.log1p(-prob)
    return np.exp(logpmf)


def key_count_distribution(f: int, a_hat: int, p_tpr: float, p_tnr: float) -> np.ndarray:
    """PMF over 0..F of the actual key-frame count given a_hat predicted keys."""
    if not 0 <= a_hat <= f:
        raise ValueError("a_hat must lie in [0, F]")
    for name, v in (("p_tpr", p_tpr), ("p_tnr", p_tnr)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1]")
    px = _binom_pmf_vector(a_hat, p_tpr)
    py = _binom_pmf_vector(f - a_hat, 1.0 - p_tnr)
    return np.convolve(px, py)


def eval_g(n: int, f: int, a_hat: int, p_tpr: float, p_tnr: float) -> float:
    """P(actual key count <= n | a_hat predicted keys); exactly 1 for n >= F.

    Computed as the CDF of the two-binomial convolution; non-decreasing in n.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n >= f:
        return 1.0
    dist = key_count_distribution(f, a_hat, p_tpr, p_tnr)
    return float(min(1.0, dist[: n + 1].sum()))


def eval_g_double_sum(n: int, f: int, a_hat: int, p_tpr: float, p_tnr: float) -> float:
    """Literal nested-sum form of the conditional CDF, kept as a cross-check.

    Outer sum over candidate counts k, inner sum over the split j of k into
    predicted-positive and predicted-negative frames. Evaluated term by term
    in log space; deliberately independent of the convolution path.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if not 0 <= a_hat <= f:
        raise ValueError("a_hat must lie in [0, F]")

    def xlogy(k: int, p: float) -> float:
        if k == 0:
            return 0.0
        return k * math.log(p) if p > 0.0 else -math.inf

    fa = f - a_hat
    total = 0.0
    for k in range(0, n + 1):
        for j in range(max(0, k - fa), min(a_hat, k) + 1):
            lg = (
                math.lgamma(a_hat + 1)
                - math.lgamma(j + 1)
                - math.lgamma(a_hat - j + 1)
                + xlogy(j, p_tpr)
                + xlogy(a_hat - j, 1.0 - p_tpr)
                + math.lgamma(fa + 1)
                - math.lgamma(k - j + 1)
                - math.lgamma(fa - k + j + 1)
                + xlogy(k - j, 1.0 - p_tnr)
                + xlogy(fa - k + j, p_tnr)
            )
            if lg > -math.inf:
                total += math.exp(lg)
    return min(1.0, total)


def oracle_g(
    n: int,
    f: int,
    a_hat: int,
    p_tpr: float,
    p_tnr: float,
    trials: int = 100_000,
    seed: int = 0,
    exact: bool = False,
) -> float:
    """Independent estimate of the conditional CDF.

    Monte Carlo by default: per-frame truths are sampled conditioned on the
    predictions (first a_hat frames predicted positive; positions are
    immaterial). With exact=True, enumerate all 2^F truth masks (F <= 20) and
    sum their conditional probabilities.
    """
    if not 0 <= a_hat <= f:
        raise ValueError("a_hat must lie in [0, F]")
    if n < 0:
        raise ValueError("n must be >= 0")
    probs1 = np.where(np.arange(f) < a_hat, p_tpr, 1.0 - p_tnr)
    if exact:
        if f > 20:
            raise ValueError("exact enumeration supported for F <= 20 only")
        total = 0.0
        chunk = 1 << 16
        bit = np.arange(f)
        for lo in range(0, 1 << f, chunk):
            idx = np.arange(lo, min(lo + chunk, 1 << f))
            masks = (idx[:, None] >> bit[None, :]) & 1
            pmask = np.where(masks == 1, probs1[None, :], 1.0 - probs1[None, :])
            pr = pmask.prod(axis=1)
            counts = masks.sum(axis=1)
            total += float(pr[counts <= n].sum())
        return min(1.0, total)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    hits = 0
    remaining = trials
    while remaining > 0:
        batch = min(remaining, 200_000)
        draws = rng.random((batch, f)) < probs1
        hits += int(np.sum(draws.sum(axis=1) <= n))
        remaining -= batch
    return hits / trials


def find_n_star(
    f: int, a_hat: int, stats: ConfusionStats, epsilon: float
) -> tuple[int, float]:
    """Smallest provision count whose conditional CDF reaches epsilon.

    A linear scan suffices because the CDF is non-decreasing in n, and n = F
    always qualifies (the CDF is exactly 1 there).
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    p_tpr, p_tnr = posterior_rates(stats.p, stats.q, stats.lam)
    dist = key_count_distribution(f, a_hat, p_tpr, p_tnr)
    cdf = np.minimum(1.0, np.cumsum(dist))
    for n in range(f):
        if cdf[n] >= epsilon:
            return n, float(cdf[n])
    return f, 1.0


def reserve_bandwidth(n_star: int, cfg: RadioConfig) -> float:
    """Bandwidth in Hz to push n_star frame uploads through within the deadline.

    b* = alpha * n_star / (T_r * log2(1 + gamma)); gamma converted from dB.
    """
    if n_star < 0:
        raise ValueError("n_star must be >= 0")
    if n_star == 0:
        return 0.0
    gamma_lin = 10.0 ** (cfg.gamma_db / 10.0)
    return cfg.alpha_bits * n_star / (cfg.t_r_s * math.log2(1.0 + gamma_lin))


def quantize_rbs(b_star_hz: float, spec: RBSpec = RBSpec()) -> int:
    """Whole resource blocks covering the bandwidth (transmission spans T_r)."""
    if b_star_hz < 0:
        raise ValueError("bandwidth must be >= 0")
    if b_star_hz == 0.0:
        return 0
    return int(math.ceil(b_star_hz / spec.rb_bandwidth_hz))


def decide(
    f: int,
    a_hat: int,
    stats: ConfusionStats,
    radio: RadioConfig,
    rb: RBSpec = RBSpec(),
) -> ReservationDecision:
    """Full per-slot decision: provision count, bandwidth, resource blocks."""
    n_star, g = find_n_star(f, a_hat, stats, radio.epsilon)
    b = reserve_bandwidth(n_star, radio)
    return ReservationDecision(n_star, b, quantize_rbs(b, rb), g)


def run_verification(
    f_values: tuple[int, ...] = (2, 4, 6, 8, 12),
    probs: tuple[float, ...] = (0.6, 0.8, 0.95),
    mc_trials: int = 100_000,
    mc_cases: int = 12,
    seed: int = 0,
) -> list[tuple[str, bool, str]]:
    """Oracle suite for the closed-form CDF; returns (name, passed, detail) rows.

    Checks the convolution form against the exact enumeration oracle and the
    literal double sum (1e-12 agreement), verifies the CDF is non-decreasing,
    and spot-checks a Monte Carlo estimate within three standard errors.
    """
    grid = [
        (f, a, p, q, lam)
        for f in f_values
        for a in range(f + 1)
        for p in probs
        for q in probs
        for lam in probs
    ]
    max_enum = 0.0
    max_double = 0.0
    min_step = 0.0
    for f, a, p, q, lam in grid:
        p_tpr, p_tnr = posterior_rates(p, q, lam)
        dist = key_count_distribution(f, a, p_tpr, p_tnr)
        cdf = np.minimum(1.0, np.cumsum(dist))
        for n in range(f + 1):
            g = eval_g(n, f, a, p_tpr, p_tnr)
            max_enum = max(max_enum, abs(g - oracle_g(n, f, a, p_tpr, p_tnr, exact=True)))
            max_double = max(max_double, abs(g - eval_g_double_sum(n, f, a, p_tpr, p_tnr)))
        steps = np.diff(np.append(cdf[:f], 1.0))
        min_step = min(min_step, float(steps.min()))

    results = [
        ("eq-g-vs-enumeration", max_enum <= 1e-12, f"max abs diff {max_enum:.2e} over {len(grid)} cases"),
        ("eq-g-vs-double-sum", max_double <= 1e-12, f"max abs diff {max_double:.2e}"),
        ("cdf-non-decreasing", min_step >= -1e-12, f"min forward step {min_step:.2e}"),
    ]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(mc_cases):
        f = int(rng.choice(f_values))
        a = int(rng.integers(0, f + 1))
        p_tpr = float(rng.uniform(0.2, 0.98))
        p_tnr = float(rng.uniform(0.2, 0.98))
        n = int(rng.integers(0, f + 1))
        g = eval_g(n, f, a, p_tpr, p_tnr)
        est = oracle_g(n, f, a, p_tpr, p_tnr, trials=mc_trials, seed=int(rng.integers(1 << 31)))
        se = math.sqrt(max(g * (1.0 - g), 1e-12) / mc_trials)
        worst = max(worst, abs(est - g) - 3.0 * se)
    results.append(
        ("monte-carlo-within-3se", worst <= 0.0, f"worst excess over 3 std errors {worst:.2e}")
    )
    return results
