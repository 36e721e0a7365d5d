"""Ctrl-MAC: RRM codec, gateway request rounds and the sensor node state machine.

RRM wire layout (bit-packed, MSB first)::

    for each of the k request slots:
        c0   2 bits                  0 idle, 1 granted, 2 collided
        c1   ceil(log2 l) bits       data slot - 1   (zero unless c0 == 1)
        c2   ceil(log2 m_d) bits     data channel - 1 (zero unless c0 == 1)
    ftr  8 bits                      saturates at 255
    zero padding to a byte boundary

Actuation frame layout: ``[address, control]`` byte pairs, at most 111 per
frame (222 bytes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Hashable, Iterable, Mapping, Sequence

from .phy import MAX_PAYLOAD, ChannelPlan, DutyCycleState, Transmission, time_on_air
from .simcore import RngStream

K_SLOTS = 5
T_SLOT = 0.1
L_DATA_SLOTS = 16
FTR_BITS = 8
FTR_MAX = (1 << FTR_BITS) - 1
MAX_ACTUATORS_PER_FRAME = 111
GUARD_FRACTION = 0.10

IDLE, GRANTED, COLLIDED = 0, 1, 2


class RrmError(ValueError):
    pass


@dataclass(frozen=True)
class RrmSlot:
    c0: int
    c1: int = 0
    c2: int = 0


@dataclass(frozen=True)
class Rrm:
    slots: tuple[RrmSlot, ...]
    ftr: int = 0

    @property
    def k(self) -> int:
        return len(self.slots)

    def collided_slots(self) -> list[int]:
        return [i + 1 for i, s in enumerate(self.slots) if s.c0 == COLLIDED]


def _bits(n: int) -> int:
    return math.ceil(math.log2(n)) if n > 1 else 0


def rrm_size_bits(k: int, l: int, m_d: int) -> int:
    return k * (2 + _bits(l) + _bits(m_d)) + FTR_BITS


def rrm_size_bytes(k: int, l: int, m_d: int) -> int:
    return (rrm_size_bits(k, l, m_d) + 7) // 8


def _check(rrm: Rrm, k: int, l: int, m_d: int) -> None:
    if rrm.k != k:
        raise RrmError(f"RRM has {rrm.k} slots, expected {k}")
    if not 0 <= rrm.ftr <= FTR_MAX:
        raise RrmError(f"ftr {rrm.ftr} outside [0, {FTR_MAX}]")
    for i, s in enumerate(rrm.slots, 1):
        if s.c0 not in (IDLE, GRANTED, COLLIDED):
            raise RrmError(f"slot {i}: c0={s.c0} not in {{0,1,2}}")
        if s.c0 == GRANTED:
            if not (1 <= s.c1 <= l and 1 <= s.c2 <= m_d):
                raise RrmError(f"slot {i}: grant ({s.c1}, {s.c2}) outside 1..{l} x 1..{m_d}")
        elif s.c1 or s.c2:
            raise RrmError(f"slot {i}: c1/c2 set on a non-granted slot")


def encode_rrm(rrm: Rrm, k: int, l: int, m_d: int) -> bytes:
    _check(rrm, k, l, m_d)
    b1, b2 = _bits(l), _bits(m_d)
    acc, nbits = 0, 0
    for s in rrm.slots:
        c1 = s.c1 - 1 if s.c0 == GRANTED else 0
        c2 = s.c2 - 1 if s.c0 == GRANTED else 0
        acc = (((acc << 2 | s.c0) << b1 | c1) << b2) | c2
        nbits += 2 + b1 + b2
    acc = acc << FTR_BITS | rrm.ftr
    nbits += FTR_BITS
    pad = (-nbits) % 8
    return (acc << pad).to_bytes((nbits + pad) // 8, "big")


def decode_rrm(buf: bytes, k: int, l: int, m_d: int) -> Rrm:
    need = rrm_size_bytes(k, l, m_d)
    if len(buf) < need:
        raise RrmError(f"truncated RRM: {len(buf)} bytes, need {need}")
    b1, b2 = _bits(l), _bits(m_d)
    total = rrm_size_bits(k, l, m_d)
    acc = int.from_bytes(buf[:need], "big") >> (need * 8 - total)
    ftr = acc & FTR_MAX
    acc >>= FTR_BITS
    per = 2 + b1 + b2
    slots = []
    for i in reversed(range(k)):
        word = (acc >> (i * per)) & ((1 << per) - 1)
        c0 = word >> (b1 + b2)
        if c0 == GRANTED:
            c1 = ((word >> b2) & ((1 << b1) - 1)) + 1
            c2 = (word & ((1 << b2) - 1)) + 1
            slots.append(RrmSlot(c0, c1, c2))
        else:
            slots.append(RrmSlot(c0))
    rrm = Rrm(tuple(slots), ftr)
    _check(rrm, k, l, m_d)
    return rrm


def choose_request_slot(stream: RngStream, k: int) -> int:
    if k < 1:
        raise ValueError("need at least one request slot")
    return stream.uniform_int(1, k)


def retransmit_wait_index(ftr: int, r: int, p: int) -> int:
    """Index (counted in RRMs) of the round in which a collided node re-requests."""
    if not 1 <= p <= r:
        raise ValueError(f"position p={p} must satisfy 1 <= p <= r={r}")
    if ftr < 1:
        raise ValueError("ftr must be at least 1 after a collision")
    return ftr + r - p


@dataclass
class GatewaySchedule:
    """Gateway-side state carried across request rounds.

    ``available(node, c1, c2)`` lets a simulator veto pairs that are still
    reserved from an earlier round or that the node's duty cycle forbids.
    """

    k: int = K_SLOTS
    l: int = L_DATA_SLOTS
    m_d: int = 3
    ftr: int = 0
    available: Callable[[Hashable, int, int], bool] | None = None
    last_grants: dict[Hashable, tuple[int, int]] = field(default_factory=dict)
    tallies: list[tuple[int, int, int]] = field(default_factory=list)
    unresolved_singles: int = 0

    def pairs(self) -> Iterable[tuple[int, int]]:
        for c1 in range(1, self.l + 1):
            for c2 in range(1, self.m_d + 1):
                yield c1, c2


def gateway_round(requests: Sequence[tuple[Hashable, int]], sched: GatewaySchedule) -> Rrm:
    """Resolve one request period into the RRM announcing its outcome."""
    by_slot: dict[int, list[Hashable]] = {s: [] for s in range(1, sched.k + 1)}
    for node, slot in requests:
        if not 1 <= slot <= sched.k:
            raise ValueError(f"request slot {slot} outside 1..{sched.k}")
        by_slot[slot].append(node)

    used: set[tuple[int, int]] = set()
    grants: dict[Hashable, tuple[int, int]] = {}
    slots: list[RrmSlot] = []
    singles_unresolved = 0
    for s in range(1, sched.k + 1):
        nodes = by_slot[s]
        if not nodes:
            slots.append(RrmSlot(IDLE))
        elif len(nodes) == 1:
            pair = next(
                (
                    p
                    for p in sched.pairs()
                    if p not in used
                    and (sched.available is None or sched.available(nodes[0], *p))
                ),
                None,
            )
            if pair is None:
                slots.append(RrmSlot(COLLIDED))
                singles_unresolved += 1
            else:
                used.add(pair)
                grants[nodes[0]] = pair
                slots.append(RrmSlot(GRANTED, *pair))
        else:
            slots.append(RrmSlot(COLLIDED))

    n_coll = sum(1 for x in slots if x.c0 == COLLIDED)
    sched.ftr = min(max(sched.ftr - 1, 0) + n_coll, FTR_MAX)
    sched.last_grants = grants
    sched.unresolved_singles += singles_unresolved
    sched.tallies.append(
        (
            sum(1 for x in slots if x.c0 == IDLE),
            sum(1 for x in slots if x.c0 == GRANTED),
            n_coll,
        )
    )
    return Rrm(tuple(slots), sched.ftr)


# --- sensor node -----------------------------------------------------------

@dataclass(frozen=True)
class Sample:
    event_id: int
    value: float
    generated_at: float


@dataclass(frozen=True)
class NodeMacState:
    phase: str = "idle"  # idle | syncing | requesting | backoff | granted | sending
    pending: Sample | None = None
    request_slot: int = 0
    wait: int = 0
    grant: tuple[int, int] | None = None


@dataclass(frozen=True)
class SendRequest:
    slot: int


@dataclass(frozen=True)
class SendData:
    slot: int
    channel: int


@dataclass(frozen=True)
class Wait:
    n_rrm: int


@dataclass(frozen=True)
class Sleep:
    pass


Action = SendRequest | SendData | Wait | Sleep


def offer_sample(state: NodeMacState, sample: Sample) -> tuple[NodeMacState, Sample | None]:
    """Install a fresh sample; returns the superseded one, if any."""
    old = state.pending
    phase = "syncing" if state.phase == "idle" else state.phase
    return replace(state, pending=sample, phase=phase), old


def node_on_rrm(
    state: NodeMacState, rrm: Rrm | None, stream: RngStream, k: int = K_SLOTS
) -> tuple[NodeMacState, Action]:
    """Advance the node on reception of an RRM (``None`` if it failed to decode)."""
    if rrm is None:
        return state, Sleep()
    phase = state.phase
    if phase == "syncing":
        slot = choose_request_slot(stream, k)
        return replace(state, phase="requesting", request_slot=slot), SendRequest(slot)
    if phase == "requesting":
        own = rrm.slots[state.request_slot - 1]
        if own.c0 == GRANTED:
            return replace(state, phase="granted", grant=(own.c1, own.c2)), SendData(own.c1, own.c2)
        if own.c0 == COLLIDED:
            collided = rrm.collided_slots()
            r = len(collided)
            p = collided.index(state.request_slot) + 1
            w = retransmit_wait_index(max(rrm.ftr, 1), r, p)
            return replace(state, phase="backoff", wait=w), Wait(w)
        # request went unheard: try again in this round
        slot = choose_request_slot(stream, k)
        return replace(state, request_slot=slot), SendRequest(slot)
    if phase == "backoff":
        left = state.wait - 1
        if left <= 0:
            slot = choose_request_slot(stream, k)
            return replace(state, phase="requesting", request_slot=slot, wait=0), SendRequest(slot)
        return replace(state, wait=left), Wait(left)
    return state, Sleep()


def node_data_sent(state: NodeMacState) -> tuple[NodeMacState, Sample | None]:
    """The granted frame left the radio carrying the current pending sample."""
    sent = state.pending
    return NodeMacState(), sent


# --- actuation downlink ----------------------------------------------------

def quantize_valve(v: float) -> int:
    return int(round(min(max(v, 0.0), 1.0) * 255))


def build_actuation_frames(
    outbox: Mapping[int, int], max_entries: int = MAX_ACTUATORS_PER_FRAME
) -> list[bytes]:
    """Pack ``actuator -> control byte`` entries, 2 bytes each, splitting at 111."""
    items = list(outbox.items())
    frames = []
    for i in range(0, len(items), max_entries):
        chunk = items[i : i + max_entries]
        buf = bytearray()
        for addr, val in chunk:
            if not (0 <= addr <= 255 and 0 <= val <= 255):
                raise ValueError(f"actuation entry ({addr}, {val}) does not fit in bytes")
            buf += bytes((addr, val))
        frames.append(bytes(buf))
    return frames


def parse_actuation_frame(buf: bytes) -> dict[int, int]:
    if len(buf) % 2:
        raise ValueError("actuation frame length must be even")
    return {buf[i]: buf[i + 1] for i in range(0, len(buf), 2)}


def actuation_transmission(
    outbox: Mapping[int, int],
    now: float,
    plan: ChannelPlan,
    dc: DutyCycleState,
    channel: str,
    src: Hashable = "gateway",
    header_bytes: int = 0,
) -> Transmission | None:
    """Next actuation frame for ``outbox`` at the earliest duty-cycle-legal time.

    Takes as many entries as fit after ``header_bytes`` (111 without a
    header) and commits the channel's duty cycle. ``None`` when empty.
    """
    if not outbox:
        return None
    room = (MAX_PAYLOAD - header_bytes) // 2
    entries = dict(list(outbox.items())[: min(room, MAX_ACTUATORS_PER_FRAME)])
    payload = build_actuation_frames(entries, max_entries=len(entries))[0]
    nbytes = header_bytes + len(payload)
    toa = time_on_air(nbytes, plan, channel)
    start = max(now, dc.earliest(src, channel))
    dc.commit(src, channel, start, toa, plan[channel].duty_cycle)
    return Transmission(channel, start, toa, nbytes, src, role="actuation", data=entries)
