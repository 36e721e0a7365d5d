"""Closed-form Ctrl-MAC delay analysis and the C1/C2 co-design checks.

Unit convention: arrival rates ``lam`` are packets per request round, where
one round lasts ``k * t_slot`` seconds (0.5 s by default). Use
:func:`per_round` to convert packets per minute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .ctrlmac import K_SLOTS, MAX_ACTUATORS_PER_FRAME, T_SLOT
from .phy import MAX_PAYLOAD, default_plan, time_on_air


class SaturationError(ValueError):
    pass


def round_seconds(k: int = K_SLOTS, t_slot: float = T_SLOT) -> float:
    return k * t_slot


def per_round(packets_per_minute: float, k: int = K_SLOTS, t_slot: float = T_SLOT) -> float:
    return packets_per_minute / 60.0 * round_seconds(k, t_slot)


def request_service_rate(lam: float, k: int = K_SLOTS) -> float:
    if lam <= 0 or k < 1:
        raise ValueError("need lam > 0 and k >= 1")
    # -log1p(-x) == ln(1/(1-x)) without cancellation for small lam/k
    return -math.log1p(-math.exp(-lam / k))


class RequestDelay(NamedTuple):
    probability: float
    mean_wait: float  # seconds
    mu: float  # per round


def request_delay_probability(
    lam: float, k: int = K_SLOTS, x_seconds: float = 5.0, t_slot: float = T_SLOT
) -> RequestDelay:
    """``P[t_req <= x]`` of the M/M/1 request stage."""
    if x_seconds < 0:
        raise ValueError("x must be non-negative")
    mu = request_service_rate(lam, k)
    if lam >= mu:
        # saturation point: lam = -ln(1 - e^{-lam/k})
        raise SaturationError(
            f"unstable request stage: lam={lam:.4g} >= mu={mu:.4g} per round "
            f"(saturates near {saturation_load(k):.4g} per round)"
        )
    rnd = round_seconds(k, t_slot)
    x = x_seconds / rnd
    p = 1.0 - math.exp(-(mu - lam) * x)
    return RequestDelay(p, rnd / (mu - lam), mu)


def request_delay_quantile(lam: float, q: float, k: int = K_SLOTS, t_slot: float = T_SLOT) -> float:
    mu = request_service_rate(lam, k)
    if lam >= mu:
        raise SaturationError(f"unstable request stage at lam={lam}")
    return -math.log1p(-q) / (mu - lam) * round_seconds(k, t_slot)


def saturation_load(k: int = K_SLOTS) -> float:
    lo, hi = 1e-9, 50.0 * k
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid < request_service_rate(mid, k):
            lo = mid
        else:
            hi = mid
    return lo


def send_delay_mdn(lambda_dt: float, n: int = 3) -> float:
    if not 0 < lambda_dt < n:
        raise SaturationError(f"M/D/n stage needs 0 < lambda_dt < n (got {lambda_dt}, n={n})")
    return 1.0 / n + lambda_dt / (2.0 * n * (n - lambda_dt))


def update_delay_bounds(
    n_actuators: int = 10, bytes_per_actuator: int = 2, dc: float = 0.10
) -> tuple[float, float]:
    """Actuation delay range on the reserved downlink.

    The update waits out the duty-cycle pause of the previous actuation
    frame, then rides its own frame. Low end: the previous frame was the
    smallest possible (one actuator). High end: it was a full 222-byte frame.
    """
    plan = default_plan()
    smallest = time_on_air(bytes_per_actuator, plan, "actuation")
    if n_actuators == 0:
        return smallest / dc, smallest / dc
    own_bytes = min(n_actuators, MAX_ACTUATORS_PER_FRAME) * bytes_per_actuator
    own = time_on_air(own_bytes, plan, "actuation")
    largest = time_on_air(MAX_PAYLOAD, plan, "actuation")
    return smallest / dc + own, largest / dc + own


def actuation_period(n_actuators: int, bytes_per_actuator: int = 2, dc: float = 0.10) -> float:
    """Cadence of back-to-back actuation frames under the duty cycle."""
    toa = time_on_air(n_actuators * bytes_per_actuator, default_plan(), "actuation")
    return toa / dc


@dataclass(frozen=True)
class DelayBudget:
    t_sync: tuple[float, float]
    t_req: tuple[float, float]
    t_send: tuple[float, float]
    t_update: tuple[float, float]

    @property
    def t_mac(self) -> tuple[float, float]:
        return mac_delay_bounds(self)


def mac_delay_bounds(budget: DelayBudget) -> tuple[float, float]:
    parts = (budget.t_sync, budget.t_req, budget.t_send, budget.t_update)
    return sum(p[0] for p in parts), sum(p[1] for p in parts)


def reference_budget(k: int = K_SLOTS, t_slot: float = T_SLOT, t_req_bound: float = 10.0) -> DelayBudget:
    """Published per-stage bounds of the default Ctrl-MAC configuration.

    ``t_req_bound`` is the 99 % request-delay target; it is only valid while
    :func:`request_delay_probability` at the design load stays >= 0.99.
    """
    return DelayBudget(
        t_sync=(0.0, k * t_slot),
        t_req=(2 * t_slot, t_req_bound),
        t_send=(0.3, 0.45),
        t_update=(0.4, 3.6),
    )


def derived_budget(
    load_ppm: tuple[float, float] = (12.0, 150.0),
    k: int = K_SLOTS,
    t_slot: float = T_SLOT,
    n_channels: int = 3,
    n_actuators: int = 10,
    bytes_per_actuator: int = 2,
    quantile: float = 0.99,
) -> DelayBudget:
    """Every stage evaluated from the formulas at the given load range."""
    lo_l, hi_l = (per_round(x, k, t_slot) for x in load_ppm)
    return DelayBudget(
        t_sync=(0.0, k * t_slot),
        t_req=(2 * t_slot, request_delay_quantile(hi_l, quantile, k, t_slot)),
        t_send=(send_delay_mdn(lo_l, n_channels), send_delay_mdn(hi_l, n_channels)),
        t_update=update_delay_bounds(n_actuators, bytes_per_actuator),
    )


class ConstraintCheck(NamedTuple):
    ok: bool
    margin: float


def check_c1(tau_d: float, budget: DelayBudget) -> ConstraintCheck:
    hi = mac_delay_bounds(budget)[1]
    return ConstraintCheck(hi < tau_d, tau_d - hi)


def check_c2(event_rate_per_min: float, capacity_per_min: float = 136.0) -> ConstraintCheck:
    if event_rate_per_min < 0 or capacity_per_min < 0:
        raise ValueError("rates must be non-negative")
    return ConstraintCheck(event_rate_per_min < capacity_per_min, capacity_per_min - event_rate_per_min)


def delay_table(ppm_grid, x_grid=(1.0, 5.0, 10.0), k: int = K_SLOTS, t_slot: float = T_SLOT,
                n_channels: int = 3) -> list[dict]:
    """One row per load; saturated loads leave the delay columns as ``None``."""
    rows = []
    for ppm in ppm_grid:
        lam = per_round(ppm, k, t_slot)
        row = {"packets_per_min": ppm, "lambda_per_round": lam,
               "mu_req": request_service_rate(lam, k)}
        try:
            for x in x_grid:
                row[f"p_req_le_{x:g}s"] = request_delay_probability(lam, k, x, t_slot).probability
            row["t_req_mean"] = request_delay_probability(lam, k, 0.0, t_slot).mean_wait
        except SaturationError:
            for x in x_grid:
                row[f"p_req_le_{x:g}s"] = None
            row["t_req_mean"] = None
        try:
            row["t_send"] = send_delay_mdn(lam, n_channels)
        except SaturationError:
            row["t_send"] = None
        rows.append(row)
    return rows


# --- Monte-Carlo oracle ------------------------------------------------------

def simulate_request_stage(
    lam: float,
    k: int = K_SLOTS,
    n_requests: int = 200_000,
    seed: int = 0,
    warmup: int = 5_000,
) -> np.ndarray:
    """Sojourn times (in rounds) of a request stage driven by slot collisions.

    Requests arrive as a Poisson stream (``lam`` per round) and are served
    FIFO. Service consists of attempts in a uniformly drawn slot; an attempt
    fails when any of the Poisson(``lam``) other contenders of that round
    picked the same slot. The number of failed attempts ``F`` sets the
    integer part of the service time; within the final round the residual
    is spread with the same per-round failure hazard (memoryless split).
    """
    rng = np.random.default_rng(seed)
    n = n_requests + warmup
    inter = rng.exponential(1.0 / lam, n)

    fails = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    while active.size:
        others = rng.poisson(lam, active.size)
        same_slot = rng.binomial(others, 1.0 / k)
        failed = same_slot > 0
        fails[active[failed]] += 1
        active = active[failed]

    p_fail = 1.0 - math.exp(-lam / k)
    hazard = -math.log(p_fail)
    u = rng.random(n)
    # residual in [0, 1) with density proportional to exp(-hazard * r)
    resid = -np.log1p(-u * (1.0 - math.exp(-hazard))) / hazard
    service = fails + resid

    sojourn = np.empty(n)
    wait = 0.0
    for i in range(n):
        sojourn[i] = wait + service[i]
        if i + 1 < n:
            wait = max(0.0, sojourn[i] - inter[i + 1])
    return sojourn[warmup:]


def empirical_request_cdf(lam: float, x_seconds, k: int = K_SLOTS, t_slot: float = T_SLOT,
                          n_requests: int = 200_000, seed: int = 0) -> np.ndarray:
    soj = simulate_request_stage(lam, k, n_requests, seed) * round_seconds(k, t_slot)
    return np.array([np.mean(soj <= x) for x in np.atleast_1d(x_seconds)])
