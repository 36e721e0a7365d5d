"""Event-driven co-simulation of DMA plants, sensor nodes, the network and the gateway controller.

Plants are integrated exactly between events. Sensors sample every ``h``,
evaluate the trigger and hand fresh samples to the selected MAC. The
gateway updates its held estimate on reception and pushes valve settings
to the actuators over the actuation downlink, where they take effect on
frame reception.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable

import numpy as np

from . import ctrlmac as cm
from . import lorawan as lw
from .phy import (
    NODE_ID_BYTES,
    SENSOR_PAYLOAD_BYTES,
    DutyCycleState,
    Outcome,
    Transmission,
    node_snr_db,
    resolve_deliveries,
    time_on_air,
)
from .plant import (
    DemandProfile,
    PlantDivergence,
    PlantState,
    clamp_valve,
    customer_demand_at,
    demand_at,
    event_flags,
    feedback_input,
    integrate_step,
    leak_at,
)
from .scenario import ScenarioSpec
from .simcore import EventKind, EventQueue, RngRegistry

DRAIN = 60.0  # network keeps running this long after the last sample
GATEWAY = "gateway"


@dataclass
class EventRecord:
    event_id: int
    node: str
    generated_at: float
    dma: int | None = None
    received_at: float | None = None
    acked: bool = False
    delivered_at: float | None = None
    fate: str = "pending"  # delivered | superseded | lost | dropped | pending

    @property
    def delay(self) -> float | None:
        return None if self.delivered_at is None else self.delivered_at - self.generated_at


@dataclass
class SimLog:
    spec: ScenarioSpec
    events: list[EventRecord] = field(default_factory=list)
    counters: Counter = field(default_factory=Counter)
    # phase -> per-DMA running maximum of (level - ref) / ref over all tanks
    peak_excess: dict[str, list[float]] = field(default_factory=dict)
    traces: list[tuple[float, int, tuple[float, ...]]] = field(default_factory=list)
    phases: tuple[tuple[str, float, float], ...] = (("all", 0.0, math.inf),)
    sensor_samples: int = 0


def phase_windows(demand: DemandProfile) -> tuple[tuple[str, float, float], ...]:
    if demand.kind != "fault":
        return (("all", 0.0, math.inf),)
    return (
        ("P1", 0.0, demand.t_start),
        ("P2", demand.t_start, demand.t_end),
        ("P3", demand.t_end, math.inf),
    )


def _nominal_demand(profile: DemandProfile) -> float:
    """Demand the nominal valve opening balances: the profile's daily mean."""
    if profile.kind == "constant":
        return demand_at(profile, 0.0)
    base = (profile.base or DemandProfile()) if profile.kind == "fault" else profile
    grid = np.linspace(0.0, base.day_length, 1441)[:-1]
    return float(np.mean([demand_at(base, t) for t in grid]))


class Dma:
    """One subsystem: plant, sensors' last transmitted values and the gateway-side estimate."""

    def __init__(self, sim: "CoSimulation", idx: int, first_node: int) -> None:
        spec = sim.spec
        self.idx = idx
        self.dspec = spec.dmas[idx]
        self.model = self.dspec.model()
        n = self.model.n
        self.nodes = [f"d{idx:02d}.t{j}" for j in range(n)]
        self.addresses = list(range(first_node, first_node + n))
        xi0 = np.full(n, self.dspec.init_level - self.dspec.ref_level)
        self.state = PlantState(xi0.copy(), xi0.copy(), np.zeros(self.model.m), 0.0)
        self.sent = xi0.copy()  # sensor side: last transmitted samples
        self.hat = xi0.copy()  # controller side: held estimate
        self.valve = self._command(self.hat)  # applied at the actuators
        self.noise = np.zeros(n)
        self.nominal_demand = spec.nominal_demand if spec.nominal_demand is not None \
            else _nominal_demand(spec.demand)
        self.demand = spec.demand
        self.cache: dict = {}
        self.next_trace = 0.0
        self.w = self._disturbance(0.0)

    def _command(self, hat: np.ndarray) -> np.ndarray:
        v = self.model.nominal_valve + feedback_input(self.model.K, hat)
        return np.array([cm.quantize_valve(x) / 255.0 for x in clamp_valve(v)])

    def command_bytes(self, hat: np.ndarray) -> list[int]:
        v = clamp_valve(self.model.nominal_valve + feedback_input(self.model.K, hat))
        return [cm.quantize_valve(x) for x in v]

    def _disturbance(self, t: float) -> np.ndarray:
        # a leak drains on top of the customer valves, so it escapes the 100% cap
        d = np.clip(customer_demand_at(self.demand, t) + self.noise, 0.0, 100.0)
        d = d + leak_at(self.demand, t, self.model.n)
        return -self.model.demand_to_rate * (d - self.nominal_demand) / 100.0

    def refresh_disturbance(self, t: float) -> None:
        self.w = self._disturbance(t)

    def advance(self, t: float) -> None:
        dt = t - self.state.t
        if dt <= 0:
            return
        self.state.v = self.valve - self.model.nominal_valve
        self.state = integrate_step(self.model, self.state, self.w, dt, self.cache)
        if len(self.cache) > 4096:
            self.cache.clear()

    @property
    def levels(self) -> np.ndarray:
        return self.model.ref_levels + self.state.xi


class CoSimulation:
    def __init__(self, spec: ScenarioSpec) -> None:
        if spec.protocol not in ("ctrlmac", "lorawan", "lorawanpp", "wired"):
            raise ValueError(f"unknown protocol {spec.protocol!r}")
        self.spec = spec
        self.q = EventQueue()
        self.rng = RngRegistry(spec.seed)
        self.dc = DutyCycleState()
        self.log = SimLog(spec, phases=phase_windows(spec.demand))
        self.log.peak_excess = {p[0]: [] for p in self.log.phases}
        self.end = spec.duration + (DRAIN if spec.duration > 0 else 0.0)

        self.dmas: list[Dma] = []
        self.node_dma: dict[str, tuple[int, int]] = {}
        first = 0
        for i in range(len(spec.dmas)):
            d = Dma(self, i, first)
            first += d.model.n
            self.dmas.append(d)
            for j, node in enumerate(d.nodes):
                self.node_dma[node] = (i, j)
        for ph in self.log.peak_excess.values():
            ph.extend([-math.inf] * len(self.dmas))
        if spec.traffic is not None:
            self.nodes = [f"n{i:03d}" for i in range(spec.traffic.n_nodes)]
        else:
            self.nodes = [n for d in self.dmas for n in d.nodes]
        if len(self.nodes) > 256:
            raise ValueError("actuation addresses are one byte: at most 256 actuators")
        self.address = {n: i for i, n in enumerate(self.nodes)}
        self.actuator_node = {i: n for n, i in self.address.items()}
        self.snr = self._snr_table()

        self.records: dict[int, EventRecord] = {}
        self.next_event_id = 0
        # gateway actuation outbox: address -> control byte, plus the event each entry carries
        self.outbox: dict[int, int] = {}
        self.outbox_event: dict[int, int] = {}
        self.entries_left: Counter = Counter()
        self.act_busy = False
        self.act_release_pending = False
        self.last_rx_event: dict[str, int] = {}

        if spec.protocol == "ctrlmac":
            self.net = CtrlMacNet(self)
        elif spec.protocol in ("lorawan", "lorawanpp"):
            self.net = LoRaWanNet(self, confirmed=spec.protocol == "lorawanpp")
        else:
            self.net = WiredNet(self)

    # --- setup -----------------------------------------------------------
    def _snr_table(self) -> dict[str, float | None]:
        cap = self.spec.capture
        if not cap.enabled:
            return {n: None for n in self.nodes}
        radius = cap.area_radius or 5000.0
        out = {}
        for n in self.nodes:
            s = self.rng(("position", n))
            r = radius * math.sqrt(s.uniform(0.0, 1.0))
            a = s.uniform(0.0, 2 * math.pi)
            out[n] = node_snr_db(cap.snr_db, (r * math.cos(a), r * math.sin(a)))
        return out

    # --- bookkeeping -------------------------------------------------------
    def new_event(self, node: str, t: float, dma: int | None) -> int:
        eid = self.next_event_id
        self.next_event_id += 1
        self.records[eid] = EventRecord(eid, node, t, dma)
        return eid

    def supersede(self, eid: int) -> None:
        rec = self.records[eid]
        if rec.fate == "pending" and rec.received_at is None:
            rec.fate = "superseded"

    def drop(self, eid: int) -> None:
        rec = self.records[eid]
        if rec.fate == "pending" and rec.received_at is None:
            rec.fate = "dropped"
            self.log.counters["dropped"] += 1

    def lose(self, eid: int) -> None:
        rec = self.records[eid]
        if rec.fate == "pending" and rec.received_at is None:
            rec.fate = "lost"

    def mark_acked(self, eid: int) -> None:
        self.records[eid].acked = True

    # --- gateway / controller ----------------------------------------------
    def gateway_receive(self, node: str, sample: cm.Sample, t: float, acked: bool) -> None:
        rec = self.records[sample.event_id]
        if acked:
            rec.acked = True
        if rec.received_at is not None:
            return  # duplicate from a retry whose ack was lost
        rec.received_at = t
        if self.last_rx_event.get(node, -1) > sample.event_id:
            rec.fate = "superseded"
            return
        self.last_rx_event[node] = sample.event_id
        if node in self.node_dma:
            i, j = self.node_dma[node]
            dma = self.dmas[i]
            dma.hat[j] = sample.value
            new = dma.command_bytes(dma.hat)
            col = dma.model.K[:, j]
            updates = {dma.addresses[a]: new[a] for a in range(dma.model.m) if col[a] != 0}
        else:
            updates = {self.address[node]: sample.event_id & 0xFF}
        if isinstance(self.net, WiredNet):
            self.apply_updates(updates, t)
            rec.delivered_at, rec.fate = t, "delivered"
            return
        for addr, byte in updates.items():
            old = self.outbox_event.get(addr)
            if old is not None and old != sample.event_id:
                self.entries_left[old] -= 1
                orec = self.records[old]
                if orec.fate == "pending":
                    orec.fate = "superseded"
            self.outbox[addr] = byte
            self.outbox_event[addr] = sample.event_id
            self.entries_left[sample.event_id] += 1
        if not updates:
            rec.delivered_at, rec.fate = t, "delivered"
        self.kick_actuation(t)

    def apply_updates(self, entries: dict[int, int], t: float) -> None:
        for addr, byte in entries.items():
            node = self.actuator_node[addr]
            if node in self.node_dma:
                i, j = self.node_dma[node]
                dma = self.dmas[i]
                dma.advance(t)
                self.observe(dma, t)
                dma.valve[j] = byte / 255.0

    def kick_actuation(self, t: float) -> None:
        if self.act_busy or not self.outbox:
            return
        ch = self.net.actuation_channel
        earliest = self.dc.earliest(GATEWAY, ch)
        if earliest > t:
            if not self.act_release_pending:
                self.act_release_pending = True
                self.q.at(earliest, EventKind.DC_RELEASE, "actuation")
            return
        tx = self.net.actuation_frame(self.outbox, t)
        for addr in tx.data:
            del self.outbox[addr]
        self.act_busy = True
        self.log.counters["actuation_frames"] += 1
        tags = {addr: self.outbox_event.pop(addr) for addr in tx.data}
        self.q.at(tx.end, EventKind.TX_END, "actuation", (tx, tags))

    def on_actuation_end(self, t: float, tx: Transmission, tags: dict[int, int]) -> None:
        self.act_busy = False
        self.apply_updates(tx.data, t)
        for eid in tags.values():
            self.entries_left[eid] -= 1
            rec = self.records[eid]
            if self.entries_left[eid] == 0 and rec.fate == "pending":
                rec.delivered_at, rec.fate = t, "delivered"
        self.kick_actuation(t)

    # --- plant side --------------------------------------------------------
    def observe(self, dma: Dma, t: float) -> None:
        excess = float(np.max((dma.levels - dma.model.ref_levels) / dma.model.ref_levels))
        if not math.isfinite(excess):
            raise PlantDivergence(f"DMA {dma.idx}: non-finite level at t={t}")
        for name, lo, hi in self.log.phases:
            if lo <= t < hi or (hi == math.inf and t >= lo):
                peaks = self.log.peak_excess[name]
                peaks[dma.idx] = max(peaks[dma.idx], excess)
                break

    def on_sample(self, dma: Dma, t: float) -> None:
        dma.advance(t)
        self.observe(dma, t)
        if self.spec.trace_every and t >= dma.next_trace:
            dma.next_trace += self.spec.trace_every
            self.log.traces.append((t, dma.idx, tuple(float(x) for x in dma.levels)))
        self.log.sensor_samples += dma.model.n
        flags = event_flags(dma.state.xi, dma.sent, dma.model.sigma)
        for j in np.flatnonzero(flags):
            value = float(dma.state.xi[j])
            dma.sent[j] = value
            node = dma.nodes[j]
            eid = self.new_event(node, t, dma.idx)
            self.net.offer(node, cm.Sample(eid, value, t), t)
        nxt = t + dma.dspec.h
        if nxt <= self.spec.duration:
            self.q.at(nxt, EventKind.PLANT_SAMPLE, dma)

    def on_demand_change(self, dma: Dma, t: float) -> None:
        dma.advance(t)
        self.observe(dma, t)
        s = self.rng(("demand-noise", dma.idx))
        dma.noise = np.array([s.normal(0.0, self.spec.demand_noise_pct) for _ in range(dma.model.n)])
        dma.refresh_disturbance(t)
        nxt = t + self.spec.demand_noise_period
        if nxt <= self.end:
            self.q.at(nxt, EventKind.DEMAND_CHANGE, dma)

    def on_traffic(self, node: str, t: float) -> None:
        eid = self.new_event(node, t, None)
        self.log.sensor_samples += 1
        self.net.offer(node, cm.Sample(eid, float(eid), t), t)
        tr = self.spec.traffic
        if tr.pattern == "periodic":
            nxt = t + tr.interval
        else:
            nxt = t + self.rng(("traffic", node)).exponential(tr.interval)
        if nxt <= self.spec.duration:
            self.q.at(nxt, EventKind.PLANT_SAMPLE, node)

    # --- main loop ---------------------------------------------------------
    def run(self) -> SimLog:
        spec = self.spec
        if spec.duration <= 0:
            return self.log
        for dma in self.dmas:
            self.observe(dma, 0.0)
            self.q.at(dma.dspec.phase_offset, EventKind.PLANT_SAMPLE, dma)
            self.q.at(0.0, EventKind.DEMAND_CHANGE, dma)
            for name, lo, hi in self.log.phases[1:]:
                self.q.at(lo, EventKind.FAULT_TOGGLE, dma)
        if spec.traffic is not None:
            for node in self.nodes:
                s = self.rng(("traffic", node))
                first = s.uniform(0.0, spec.traffic.interval) if spec.traffic.pattern == "periodic" \
                    else s.exponential(spec.traffic.interval)
                if first <= spec.duration:
                    self.q.at(first, EventKind.PLANT_SAMPLE, node)
        self.net.start()

        while len(self.q) and self.q.peek_time() <= self.end:
            ev = self.q.pop()
            t = ev.fire_time
            kind = ev.kind
            if kind is EventKind.PLANT_SAMPLE:
                if isinstance(ev.target, Dma):
                    self.on_sample(ev.target, t)
                else:
                    self.on_traffic(ev.target, t)
            elif kind is EventKind.DEMAND_CHANGE:
                self.on_demand_change(ev.target, t)
            elif kind is EventKind.FAULT_TOGGLE:
                ev.target.advance(t)
                self.observe(ev.target, t)
                ev.target.refresh_disturbance(t)
            elif kind is EventKind.DC_RELEASE and ev.target == "actuation":
                self.act_release_pending = False
                self.kick_actuation(t)
            elif kind is EventKind.TX_END and ev.target == "actuation":
                self.on_actuation_end(t, *ev.data)
            else:
                self.net.handle(ev)

        for dma in self.dmas:
            dma.advance(self.end)
            self.observe(dma, self.end)
        self.log.events = [self.records[i] for i in range(self.next_event_id)]
        return self.log


# --- networks -----------------------------------------------------------------

class WiredNet:
    actuation_channel = "actuation"

    def __init__(self, sim: CoSimulation) -> None:
        self.sim = sim

    def start(self) -> None:
        pass

    def offer(self, node: str, sample: cm.Sample, t: float) -> None:
        self.sim.gateway_receive(node, sample, t, acked=True)

    def handle(self, ev) -> None:  # pragma: no cover - wired schedules nothing
        raise RuntimeError(f"unexpected event {ev.kind}")


def _outcome_of(tx: Transmission, others: list[Transmission], capture: bool, thr: float) -> Outcome:
    group = [tx] + [o for o in others if o is not tx and o.overlaps(tx)]
    return resolve_deliveries(group, capture, thr)[0].outcome


class CtrlMacNet:
    """Gateway request rounds, node state machines and the data phase."""

    def __init__(self, sim: CoSimulation) -> None:
        spec = sim.spec
        plan = spec.plan
        plan.validate_ctrlmac()
        self.sim = sim
        self.plan = plan
        self.k, self.t_slot, self.l = spec.k, spec.t_slot, spec.l
        self.req_ch = plan.by_role("request")[0].id
        self.rrm_ch = plan.by_role("rrm-ack")[0].id
        self.actuation_channel = plan.by_role("actuation")[0].id
        self.data_chs = plan.data_channels
        self.m_d = len(self.data_chs)
        self.rrm_bytes = cm.rrm_size_bytes(self.k, self.l, self.m_d)
        self.rrm_toa = time_on_air(self.rrm_bytes, plan, self.rrm_ch)
        self.req_toa = time_on_air(NODE_ID_BYTES, plan, self.req_ch)
        self.data_bytes = SENSOR_PAYLOAD_BYTES + NODE_ID_BYTES
        self.data_toa = time_on_air(self.data_bytes, plan, self.data_chs[0])
        self.slot_dur = self.data_toa * (1.0 + spec.guard)
        if self.rrm_toa + self.req_toa > self.t_slot:
            raise ValueError("request slot too short for the RRM plus one request frame")
        self.period = self.k * self.t_slot
        self.states: dict[str, cm.NodeMacState] = {n: cm.NodeMacState() for n in sim.nodes}
        self.requests: list[Transmission] = []
        self.reserved: dict[str, list[tuple[float, float]]] = {c: [] for c in self.data_chs}
        self.active: dict[str, list[Transmission]] = {c: [] for c in self.data_chs}
        self.round_t = 0.0
        self.sched = cm.GatewaySchedule(self.k, self.l, self.m_d, available=self._available)

    def data_start(self, round_t: float, c1: int) -> float:
        return round_t + self.rrm_toa + (c1 - 1) * self.slot_dur

    def _available(self, node: Hashable, c1: int, c2: int) -> bool:
        start = self.data_start(self.round_t, c1)
        end = start + self.slot_dur
        ch = self.data_chs[c2 - 1]
        if any(s < end and start < e for s, e in self.reserved[ch]):
            return False
        return self.sim.dc.earliest(node, ch) <= start

    def start(self) -> None:
        self.sim.q.at(0.0, EventKind.RRM_BROADCAST, GATEWAY)

    def offer(self, node: str, sample: cm.Sample, t: float) -> None:
        state, old = cm.offer_sample(self.states[node], sample)
        self.states[node] = state
        if old is not None:
            self.sim.supersede(old.event_id)

    def actuation_frame(self, outbox, t) -> Transmission:
        return cm.actuation_transmission(outbox, t, self.plan, self.sim.dc, self.actuation_channel, GATEWAY)

    def _gateway_view(self) -> list[tuple[str, int]]:
        sim = self.sim
        cap = sim.spec.capture
        by_slot: dict[int, list[Transmission]] = {}
        for tx in self.requests:
            by_slot.setdefault(tx.data, []).append(tx)
        out = []
        for slot in sorted(by_slot):
            group = by_slot[slot]
            if len(group) == 1:
                out.append((group[0].src, slot))
                continue
            res = resolve_deliveries(group, cap.enabled, cap.threshold_db)
            won = [tx for tx, d in zip(group, res) if d.outcome is Outcome.DELIVERED]
            sim.log.counters["suspected"] += sum(d.outcome is Outcome.SUSPECTED for d in res)
            if len(won) == 1:
                sim.log.counters["captured_requests"] += 1
                out.append((won[0].src, slot))
            else:
                sim.log.counters["request_collisions"] += 1
                out.extend((tx.src, slot) for tx in group)
        return out

    def on_rrm(self, t: float) -> None:
        sim = self.sim
        self.round_t = t
        rrm = cm.gateway_round(self._gateway_view(), self.sched)
        self.requests = []
        for ch, lst in self.reserved.items():
            self.reserved[ch] = [(s, e) for s, e in lst if e > t]
        for node, (c1, c2) in self.sched.last_grants.items():
            start = self.data_start(t, c1)
            self.reserved[self.data_chs[c2 - 1]].append((start, start + self.slot_dur))
        gate = sim.dc.earliest(GATEWAY, self.rrm_ch) <= t
        if gate:
            sim.dc.commit(GATEWAY, self.rrm_ch, t, self.rrm_toa, self.plan[self.rrm_ch].duty_cycle)
            heard = cm.decode_rrm(cm.encode_rrm(rrm, self.k, self.l, self.m_d), self.k, self.l, self.m_d)
            sim.log.counters["rrm_sent"] += 1
        else:
            heard = None
            sim.log.counters["rrm_skipped"] += 1
        for node in sim.nodes:
            state = self.states[node]
            if state.phase in ("idle", "granted"):
                continue
            state, action = cm.node_on_rrm(state, heard, sim.rng(("mac", node)), self.k)
            if isinstance(action, cm.SendRequest):
                start = t + action.slot * self.t_slot - self.req_toa
                if sim.dc.earliest(node, self.req_ch) > start:
                    state = cm.NodeMacState("syncing", state.pending)
                    sim.log.counters["request_dc_blocked"] += 1
                else:
                    sim.dc.commit(node, self.req_ch, start, self.req_toa, self.plan[self.req_ch].duty_cycle)
                    self.requests.append(Transmission(self.req_ch, start, self.req_toa, NODE_ID_BYTES,
                                                      node, "request", sim.snr[node], data=action.slot))
            elif isinstance(action, cm.SendData):
                start = self.data_start(t, action.slot)
                sim.q.at(start, EventKind.TX_START, node, self.data_chs[action.channel - 1])
            self.states[node] = state
        nxt = t + self.period
        if nxt <= sim.end:
            sim.q.at(nxt, EventKind.RRM_BROADCAST, GATEWAY)

    def handle(self, ev) -> None:
        sim = self.sim
        t = ev.fire_time
        if ev.kind is EventKind.RRM_BROADCAST:
            self.on_rrm(t)
        elif ev.kind is EventKind.TX_START:
            node, ch = ev.target, ev.data
            state, sample = cm.node_data_sent(self.states[node])
            self.states[node] = state
            if sample is None:
                return
            sim.dc.commit(node, ch, t, self.data_toa, self.plan[ch].duty_cycle)
            tx = Transmission(ch, t, self.data_toa, self.data_bytes, node, "data", sim.snr[node], data=sample)
            self.active[ch] = [o for o in self.active[ch] if o.end > t - self.slot_dur] + [tx]
            sim.q.at(tx.end, EventKind.TX_END, node, tx)
        elif ev.kind is EventKind.TX_END:
            tx = ev.data
            out = _outcome_of(tx, self.active[tx.channel_id], sim.spec.capture.enabled,
                              sim.spec.capture.threshold_db)
            if out is Outcome.DELIVERED:
                sim.gateway_receive(tx.src, tx.data, t, acked=True)
            else:
                sim.log.counters["data_collisions"] += 1
                sim.log.counters["suspected"] += out is Outcome.SUSPECTED
                sim.lose(tx.data.event_id)
        else:
            raise RuntimeError(f"unexpected event {ev.kind}")


class LoRaWanNet:
    def __init__(self, sim: CoSimulation, confirmed: bool) -> None:
        spec = sim.spec
        self.sim = sim
        self.plan = spec.plan
        self.cfg = lw.LoRaWanConfig(confirmed, spec.lorawan.ack_timeout,
                                    tuple(spec.lorawan.backoff), spec.lorawan.max_attempts)
        self.actuation_channel = self.plan.by_role("actuation")[0].id
        acks = self.plan.by_role("rrm-ack")
        self.ack_ch = acks[0].id if acks else self.actuation_channel
        self.states: dict[str, lw.AlohaNodeState] = {n: lw.AlohaNodeState() for n in sim.nodes}
        self.planned: set[str] = set()
        self.acked_now: set[str] = set()
        self.active: dict[str, list[Transmission]] = {c: [] for c in self.plan.data_channels}
        self.max_toa = time_on_air(lw.UPLINK_BYTES, self.plan, self.plan.data_channels[0])

    def start(self) -> None:
        pass

    def actuation_frame(self, outbox, t) -> Transmission:
        return lw.gateway_actuation_downlink(outbox, t, self.plan, self.sim.dc, self.actuation_channel, GATEWAY)

    def offer(self, node: str, sample: cm.Sample, t: float) -> None:
        state, old = lw.offer(self.states[node], sample)
        self.states[node] = state
        if old is not None:
            self.sim.supersede(old.event_id)
        self._maybe_plan(node, t)

    def _maybe_plan(self, node: str, t: float) -> None:
        state = self.states[node]
        if state.busy or node in self.planned or state.pending is None:
            return
        tx = lw.aloha_uplink(state, t, node, self.plan, self.sim.dc, self.sim.rng(("mac", node)))
        if tx.start > t:
            self.sim.log.counters["dc_deferrals"] += 1
        self.planned.add(node)
        self.sim.q.at(tx.start, EventKind.TX_START, node, (tx.channel_id, tx.toa))

    def handle(self, ev) -> None:
        sim = self.sim
        t = ev.fire_time
        node = ev.target
        if ev.kind is EventKind.TX_START:
            ch, toa = ev.data
            self.planned.discard(node)
            state = lw.start_attempt(self.states[node], t + toa, self.cfg)
            self.states[node] = state
            tx = Transmission(ch, t, toa, lw.UPLINK_BYTES, node, "data", sim.snr[node], data=state.inflight)
            self.active[ch] = [o for o in self.active[ch] if o.end > t - self.max_toa] + [tx]
            sim.log.counters["uplink_attempts"] += 1
            sim.q.at(tx.end, EventKind.TX_END, node, tx)
        elif ev.kind is EventKind.TX_END:
            tx = ev.data
            out = _outcome_of(tx, self.active[tx.channel_id], sim.spec.capture.enabled,
                              sim.spec.capture.threshold_db)
            if out is Outcome.DELIVERED:
                if self.cfg.confirmed:
                    ack = lw.plan_ack(t, self.cfg, self.plan, sim.dc, self.ack_ch, GATEWAY)
                    if ack is None:
                        sim.log.counters["acks_starved"] += 1
                    else:
                        sim.log.counters["acks_sent"] += 1
                        self.acked_now.add(node)
                sim.gateway_receive(node, tx.data, t, acked=node in self.acked_now)
            else:
                sim.log.counters["data_collisions"] += 1
                sim.log.counters["suspected"] += out is Outcome.SUSPECTED
            if self.cfg.confirmed:
                sim.q.at(self.states[node].awaiting_ack_until, EventKind.TIMER, node, "ack-window")
            else:
                self._after(node, False, t)
        elif ev.kind is EventKind.TIMER and ev.data == "ack-window":
            acked = node in self.acked_now
            self.acked_now.discard(node)
            self._after(node, acked, t)
        elif ev.kind is EventKind.TIMER and ev.data == "retry":
            self._maybe_plan(node, t)
        else:
            raise RuntimeError(f"unexpected event {ev.kind}")

    def _after(self, node: str, acked: bool, t: float) -> None:
        sim = self.sim
        before = self.states[node]
        state, out = lw.confirmed_uplink(before, acked, t, sim.rng(("mac", node)), self.cfg)
        self.states[node] = state
        if isinstance(out, lw.Finished):
            sim.lose(out.sample.event_id)
        elif isinstance(out, lw.Acked):
            sim.mark_acked(out.sample.event_id)
        elif isinstance(out, lw.Dropped):
            sim.drop(before.inflight.event_id)
            if before.pending is not None:
                sim.drop(before.pending.event_id)
        elif isinstance(out, lw.Retry):
            sim.log.counters["retries"] += 1
            if before.pending is not None:
                sim.supersede(before.inflight.event_id)
            sim.q.at(out.at, EventKind.TIMER, node, "retry")
            return
        self._maybe_plan(node, t)


def run_scenario(spec: ScenarioSpec) -> SimLog:
    """Simulate ``spec`` and return the raw event log (see :mod:`.metrics`)."""
    return CoSimulation(spec).run()
