"""Linearised DMA tank models, state feedback and the DPETC trigger machinery."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sl


class PlantDivergence(RuntimeError):
    pass


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class TankParams:
    outflow_sensitivity: float = 1.0e-4  # a_j, 1/s
    valve_gain: float = 1.0e-3  # beta_j, m/s per unit valve opening
    cross_section: float = 50.0  # m^2
    demand_gain: float = 0.04  # m^3/s outflow at 100 % demand
    nominal_valve: float = 0.5


@dataclass
class SubsystemModel:
    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    h: float = 4.5
    sigma: float = 0.1
    rho: float = 0.001
    tau_d: float = 0.0
    ref_levels: np.ndarray | float = 3.0
    tank_height: float = 4.5
    nominal_valve: np.ndarray | None = None
    demand_to_rate: np.ndarray | None = None  # level rate per unit demand fraction

    def __post_init__(self) -> None:
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))
        n, m = self.n, self.m
        if self.A.shape != (n, n) or self.K.shape != (m, n):
            raise ModelError("inconsistent A/B/K dimensions")
        self.ref_levels = np.broadcast_to(np.asarray(self.ref_levels, dtype=float), (n,)).copy()
        if self.nominal_valve is None:
            self.nominal_valve = np.zeros(m)
        if self.demand_to_rate is None:
            self.demand_to_rate = np.zeros(n)
        if not self.h > 0:
            raise ModelError("sampling period h must be positive")
        if not 0 <= self.sigma < 1:
            raise ModelError(f"sigma={self.sigma} outside [0, 1)")
        if not 0 <= self.tau_d < self.h:
            raise ModelError(f"tau_d={self.tau_d} must lie in [0, h={self.h})")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def closed_loop_eigs(self) -> np.ndarray:
        return np.linalg.eigvals(self.A + self.B @ self.K)

    def is_hurwitz(self) -> bool:
        return bool(np.all(self.closed_loop_eigs().real < 0))


def lqr_gain(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Continuous LQR gain in the ``u = K x`` convention (so ``K = -R^-1 B^T P``)."""
    P = sl.solve_continuous_are(A, B, Q, R)
    return -np.linalg.solve(R, B.T @ P)


def build_dma_plant(
    n_tanks: int,
    tank_params: TankParams | Sequence[TankParams] = TankParams(),
    closed_loop_pole: float = 1.0e-2,
    **model_kw,
) -> SubsystemModel:
    """Diagonal linearised DMA with an LQR gain placing each closed-loop pole
    near ``-closed_loop_pole`` (time constant of order 1e3 s)."""
    if n_tanks not in (3, 4):
        raise ModelError("a DMA has 3 or 4 tanks")
    params = [tank_params] * n_tanks if isinstance(tank_params, TankParams) else list(tank_params)
    if len(params) != n_tanks:
        raise ModelError("one TankParams per tank expected")
    a = np.array([p.outflow_sensitivity for p in params])
    beta = np.array([p.valve_gain for p in params])
    if np.any(a < 0) or np.any([p.cross_section <= 0 for p in params]):
        raise ModelError("outflow sensitivities must be >= 0 and cross sections > 0")
    if np.any(beta <= 0):
        raise ModelError(f"uncontrollable tank(s): valve gains {beta.tolist()}")
    A = np.diag(-a)
    B = np.diag(beta)
    # scalar LQR per tank: pole = -sqrt(a^2 + beta^2 q / r)
    q_over_r = np.maximum(closed_loop_pole**2 - a**2, 1e-12) / beta**2
    K = lqr_gain(A, B, np.diag(q_over_r), np.eye(n_tanks))
    model = SubsystemModel(
        A,
        B,
        K,
        nominal_valve=np.array([p.nominal_valve for p in params]),
        demand_to_rate=np.array([p.demand_gain / p.cross_section for p in params]),
        ref_levels=np.full(n_tanks, 3.0),
        **model_kw,
    )
    if not model.is_hurwitz():
        raise ModelError(f"closed loop not Hurwitz: eigenvalues {model.closed_loop_eigs()}")
    return model


def discretize(A: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(e^{A dt}, int_0^dt e^{A s} ds)`` via one augmented exponential."""
    n = A.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = A
    M[:n, n:] = np.eye(n)
    E = sl.expm(M * dt)
    return E[:n, :n], E[:n, n:]


@dataclass
class PlantState:
    xi: np.ndarray
    xi_hat: np.ndarray
    v: np.ndarray
    t: float = 0.0

    @property
    def error(self) -> np.ndarray:
        return self.xi_hat - self.xi


def integrate_step(
    model: SubsystemModel, state: PlantState, disturbance: np.ndarray | float, dt: float,
    _cache: dict | None = None,
) -> PlantState:
    """Exact zero-order-hold step of ``xi' = A xi + B v + w``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if _cache is not None and dt in _cache:
        Ad, Gd = _cache[dt]
    else:
        Ad, Gd = discretize(model.A, dt)
        if _cache is not None:
            _cache[dt] = (Ad, Gd)
    w = np.broadcast_to(np.asarray(disturbance, dtype=float), (model.n,))
    xi = Ad @ state.xi + Gd @ (model.B @ state.v + w)
    if not np.all(np.isfinite(xi)):
        raise PlantDivergence(f"non-finite plant state at t={state.t + dt}: {xi}")
    return PlantState(xi, state.xi_hat.copy(), state.v.copy(), state.t + dt)


def event_check(xi_j: float, xi_hat_j: float, sigma: float) -> bool:
    return abs(xi_hat_j - xi_j) - sigma * abs(xi_j) > 0


def event_flags(xi: np.ndarray, xi_hat: np.ndarray, sigma: float) -> np.ndarray:
    return np.abs(xi_hat - xi) - sigma * np.abs(xi) > 0


def holder_update(xi_hat: np.ndarray, xi_sampled: np.ndarray, event_flags: np.ndarray) -> np.ndarray:
    return np.where(event_flags, xi_sampled, xi_hat)


def feedback_input(K: np.ndarray, xi_hat: np.ndarray) -> np.ndarray:
    K = np.atleast_2d(K)
    xi_hat = np.asarray(xi_hat, dtype=float)
    if K.shape[1] != xi_hat.shape[0]:
        raise ValueError(f"K is {K.shape}, xi_hat has {xi_hat.shape[0]} entries")
    return K @ xi_hat


def clamp_valve(v: np.ndarray, lo: np.ndarray | float = 0.0, hi: np.ndarray | float = 1.0) -> np.ndarray:
    return np.clip(v, lo, hi)


# --- demand ----------------------------------------------------------------

@dataclass(frozen=True)
class DemandProfile:
    kind: str = "constant"  # constant | trimodal | fault
    level: float = 100.0
    day_length: float = 86400.0
    base: "DemandProfile | None" = None
    leak_rate: float = 0.0
    t_start: float = 0.0
    t_end: float = 0.0
    leak_tank: int = 0


# (hour, amplitude %, width h): morning peak, midday bump, evening peak
_TRIMODAL = ((7.5, 55.0, 1.5), (13.0, 25.0, 1.8), (19.5, 70.0, 2.0))
_TRIMODAL_FLOOR = 15.0


def demand_at(profile: DemandProfile, t: float) -> float:
    """Out-valve opening in percent at time ``t``; a fault adds its leak on top."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if profile.kind == "constant":
        return float(min(max(profile.level, 0.0), 100.0))
    if profile.kind == "trimodal":
        hour = (t % profile.day_length) / profile.day_length * 24.0
        d = _TRIMODAL_FLOOR
        for centre, amp, width in _TRIMODAL:
            # wrap-around distance keeps the curve periodic
            dist = min(abs(hour - centre), 24.0 - abs(hour - centre))
            d += amp * math.exp(-0.5 * (dist / width) ** 2)
        return float(min(d, 100.0))
    if profile.kind == "fault":
        base = demand_at(profile.base or DemandProfile(), t)
        if profile.t_start <= t < profile.t_end:
            return float(min(base + profile.leak_rate, 100.0))
        return base
    raise ValueError(f"unknown demand kind {profile.kind!r}")


def customer_demand_at(profile: DemandProfile, t: float) -> float:
    """Demand without the leak term, i.e. what the customer valves draw."""
    if profile.kind == "fault":
        return demand_at(profile.base or DemandProfile(), t)
    return demand_at(profile, t)


def leak_at(profile: DemandProfile, t: float, n: int) -> np.ndarray:
    """Per-tank extra demand (percent) from a fault, zero outside the fault window."""
    out = np.zeros(n)
    if profile.kind == "fault" and profile.t_start <= t < profile.t_end:
        out[profile.leak_tank] = profile.leak_rate
    return out


def demand_breakpoints(profile: DemandProfile) -> list[float]:
    if profile.kind == "fault":
        return [profile.t_start, profile.t_end]
    return []


def overshoot_pct(level_trace: Sequence[float] | np.ndarray, ref: float) -> float:
    if ref <= 0:
        raise ValueError("reference must be positive")
    trace = np.asarray(level_trace, dtype=float)
    if trace.size == 0:
        raise ValueError("empty trace")
    return float(max(np.max(trace) - ref, 0.0) / ref * 100.0)


OVERFLOW_PCT = 50.0


def is_critical(overshoot: float) -> bool:
    return overshoot > OVERFLOW_PCT
