"""Scenario configuration: JSON parsing, defaults and validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Any

import jsonschema

from .ctrlmac import GUARD_FRACTION, K_SLOTS, L_DATA_SLOTS, T_SLOT
from .phy import Channel, ChannelPlan, SNR_THRESHOLD_DB, default_plan
from .plant import DemandProfile, SubsystemModel, TankParams, build_dma_plant

PROTOCOLS = ("ctrlmac", "lorawan", "lorawanpp", "wired")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class DmaSpec:
    n_tanks: int = 3
    h: float = 4.5
    sigma: float = 0.1
    rho: float = 0.001
    tau_d: float = 0.0
    ref_level: float = 3.0
    init_level: float = 0.0
    tank_height: float = 4.5
    outflow_sensitivity: float = 1.0e-4
    valve_gain: float = 1.0e-3
    cross_section: float = 50.0
    demand_gain: float = 0.04
    nominal_valve: float = 0.5
    closed_loop_pole: float = 1.0e-2
    phase_offset: float = 0.0

    def model(self) -> SubsystemModel:
        tp = TankParams(
            outflow_sensitivity=self.outflow_sensitivity,
            valve_gain=self.valve_gain,
            cross_section=self.cross_section,
            demand_gain=self.demand_gain,
            nominal_valve=self.nominal_valve,
        )
        m = build_dma_plant(
            self.n_tanks, tp, self.closed_loop_pole,
            h=self.h, sigma=self.sigma, rho=self.rho, tau_d=self.tau_d,
            tank_height=self.tank_height,
        )
        m.ref_levels[:] = self.ref_level
        return m


@dataclass(frozen=True)
class TrafficSpec:
    """Plant-free load: every node reports on its own schedule."""

    n_nodes: int
    pattern: str = "periodic"  # periodic | exponential
    interval: float = 10.0


@dataclass(frozen=True)
class CaptureSpec:
    enabled: bool = False
    snr_db: float = 20.0
    threshold_db: float = SNR_THRESHOLD_DB
    area_radius: float | None = None


@dataclass(frozen=True)
class LoRaWanSpec:
    ack_timeout: float = 1.0
    backoff: tuple[float, float] = (1.0, 3.0)
    max_attempts: int = 8


@dataclass(frozen=True)
class ScenarioSpec:
    protocol: str
    duration: float
    seed: int
    name: str = "scenario"
    dmas: tuple[DmaSpec, ...] = ()
    traffic: TrafficSpec | None = None
    demand: DemandProfile = DemandProfile()
    demand_noise_pct: float = 5.0
    demand_noise_period: float = 20.0
    nominal_demand: float | None = None
    plan: ChannelPlan = field(default_factory=default_plan)
    k: int = K_SLOTS
    t_slot: float = T_SLOT
    l: int = L_DATA_SLOTS
    guard: float = GUARD_FRACTION
    capture: CaptureSpec = CaptureSpec()
    lorawan: LoRaWanSpec = LoRaWanSpec()
    trace_every: float | None = None

    @property
    def n_nodes(self) -> int:
        if self.traffic is not None:
            return self.traffic.n_nodes
        return sum(d.n_tanks for d in self.dmas)

    def with_(self, **kw) -> "ScenarioSpec":
        return replace(self, **kw)


def _schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("scenario.schema.json").read_text())


def _path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _demand(d: dict) -> DemandProfile:
    base = _demand(d["base"]) if "base" in d else None
    kw = {k: v for k, v in d.items() if k != "base"}
    return DemandProfile(base=base, **kw)


def spec_from_dict(doc: dict[str, Any]) -> ScenarioSpec:
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ScenarioError(
            "; ".join(f"{_path(e.absolute_path)}: {e.message}" for e in errors)
        )
    problems: list[str] = []
    dmas = tuple(DmaSpec(**d) for d in doc.get("dmas", []))
    for i, d in enumerate(dmas):
        if d.tau_d >= d.h:
            problems.append(f"$.dmas[{i}].tau_d: {d.tau_d} must be smaller than h={d.h}")
        if d.init_level > d.tank_height or d.ref_level > d.tank_height:
            problems.append(f"$.dmas[{i}]: levels exceed tank_height={d.tank_height}")
    traffic = TrafficSpec(**doc["traffic"]) if "traffic" in doc else None
    if not dmas and traffic is None:
        dmas = (DmaSpec(),)
    if traffic is not None and dmas:
        problems.append("$: 'traffic' and 'dmas' are mutually exclusive")
    demand = _demand(doc["demand"]) if "demand" in doc else DemandProfile()
    if demand.kind == "fault":
        if demand.t_end < demand.t_start:
            problems.append("$.demand.t_end: must not precede t_start")
        if dmas and demand.leak_tank >= min(d.n_tanks for d in dmas):
            problems.append(f"$.demand.leak_tank: {demand.leak_tank} outside every DMA")
    plan = default_plan()
    if "channels" in doc:
        try:
            plan = ChannelPlan(tuple(Channel(bandwidth=c.get("bandwidth", 125e3),
                                             **{k: v for k, v in c.items() if k != "bandwidth"})
                                     for c in doc["channels"]))
        except ValueError as exc:
            problems.append(f"$.channels: {exc}")
    if doc["protocol"] == "ctrlmac" and not problems:
        try:
            plan.validate_ctrlmac()
        except ValueError as exc:
            problems.append(f"$.channels: {exc}")
    if problems:
        raise ScenarioError("; ".join(problems))

    lw = doc.get("lorawan", {})
    kw = {k: doc[k] for k in ("name", "demand_noise_pct", "demand_noise_period", "nominal_demand",
                              "k", "t_slot", "l", "guard", "trace_every") if k in doc}
    return ScenarioSpec(
        protocol=doc["protocol"],
        duration=float(doc["duration"]),
        seed=int(doc["seed"]),
        dmas=dmas,
        traffic=traffic,
        demand=demand,
        plan=plan,
        capture=CaptureSpec(**doc.get("capture", {})),
        lorawan=LoRaWanSpec(
            ack_timeout=lw.get("ack_timeout", 1.0),
            backoff=tuple(lw.get("backoff", (1.0, 3.0))),
            max_attempts=lw.get("max_attempts", 8),
        ),
        **kw,
    )


def parse_scenario(text: str) -> ScenarioSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"$: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("$: top level must be an object")
    return spec_from_dict(doc)

