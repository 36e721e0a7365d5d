"""LoRa-like physical layer: time on air, duty cycle and collisions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Hashable, NamedTuple, Sequence

MAX_PAYLOAD = 222
SPREADING_FACTOR = 7
PREAMBLE_SYMBOLS = 8
CODING_RATE = 1  # 4/5
SNR_THRESHOLD_DB = 7.0

# 1 MHDR + 4 DevAddr + 1 FCtrl + 2 FCnt + 15 FOpts + 1 FPort + 4 MIC
LORAWAN_HEADER_BYTES = 28
SENSOR_PAYLOAD_BYTES = 8
NODE_ID_BYTES = 2


@dataclass(frozen=True)
class Channel:
    id: str
    bandwidth: float
    direction: str  # "uplink" | "downlink"
    role: str  # "request" | "data" | "rrm-ack" | "actuation"
    duty_cycle: float

    def __post_init__(self) -> None:
        if not 0 < self.duty_cycle <= 1:
            raise ValueError(f"channel {self.id}: duty cycle {self.duty_cycle} not in (0, 1]")
        if self.direction not in ("uplink", "downlink"):
            raise ValueError(f"channel {self.id}: bad direction {self.direction!r}")
        if self.bandwidth <= 0:
            raise ValueError(f"channel {self.id}: bandwidth must be positive")


@dataclass(frozen=True)
class ChannelPlan:
    channels: tuple[Channel, ...]
    spreading_factor: int = SPREADING_FACTOR

    def __post_init__(self) -> None:
        ids = [c.id for c in self.channels]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate channel ids")

    def __getitem__(self, channel_id: str) -> Channel:
        for c in self.channels:
            if c.id == channel_id:
                return c
        raise KeyError(channel_id)

    def by_role(self, role: str) -> list[Channel]:
        return [c for c in self.channels if c.role == role]

    @property
    def data_channels(self) -> list[str]:
        return [c.id for c in self.by_role("data")]

    def validate_ctrlmac(self) -> None:
        for role in ("request", "actuation"):
            if len(self.by_role(role)) != 1:
                raise ValueError(f"Ctrl-MAC plan needs exactly one {role} channel")
        if not self.by_role("data"):
            raise ValueError("Ctrl-MAC plan needs at least one data channel")


def default_plan() -> ChannelPlan:
    return ChannelPlan(
        (
            Channel("data1", 125e3, "uplink", "data", 0.01),
            Channel("data2", 125e3, "uplink", "data", 0.01),
            Channel("data3", 125e3, "uplink", "data", 0.01),
            Channel("request", 125e3, "uplink", "request", 0.10),
            Channel("rrm", 125e3, "downlink", "rrm-ack", 0.10),
            Channel("actuation", 125e3, "downlink", "actuation", 0.10),
        )
    )


def lora_toa(
    payload_bytes: int,
    sf: int = SPREADING_FACTOR,
    bandwidth: float = 125e3,
    coding_rate: int = CODING_RATE,
    crc: bool = True,
    explicit_header: bool = True,
    preamble: int = PREAMBLE_SYMBOLS,
    low_dr_optimize: bool = False,
) -> float:
    """Semtech time-on-air in seconds."""
    t_sym = (2**sf) / bandwidth
    de = 1 if low_dr_optimize else 0
    ih = 0 if explicit_header else 1
    num = 8 * payload_bytes - 4 * sf + 28 + 16 * int(crc) - 20 * ih
    n_payload = 8 + max(math.ceil(num / (4 * (sf - 2 * de))) * (coding_rate + 4), 0)
    return (preamble + 4.25 + n_payload) * t_sym


def time_on_air(payload_bytes: int, plan: ChannelPlan, channel_id: str) -> float:
    """ToA of a frame on ``channel_id``; uplinks carry a payload CRC, downlinks do not."""
    if not 1 <= payload_bytes <= MAX_PAYLOAD:
        raise ValueError(f"payload of {payload_bytes} bytes outside [1, {MAX_PAYLOAD}]")
    ch = plan[channel_id]
    return lora_toa(
        payload_bytes,
        sf=plan.spreading_factor,
        bandwidth=ch.bandwidth,
        crc=ch.direction == "uplink",
    )


class DutyCycleDecision(NamedTuple):
    allowed: bool
    retry_at: float | None


@dataclass
class DutyCycleState:
    """Per ``(node, channel)`` earliest time the next transmission may start."""

    next_allowed: dict[tuple[Hashable, str], float] = field(default_factory=dict)

    def earliest(self, node: Hashable, channel: str) -> float:
        return self.next_allowed.get((node, channel), 0.0)

    def commit(self, node: Hashable, channel: str, start: float, toa: float, duty_cycle: float) -> None:
        self.next_allowed[(node, channel)] = start + toa + toa * (1.0 / duty_cycle - 1.0)


def duty_cycle_gate(
    state: DutyCycleState,
    node: Hashable,
    channel: str,
    now: float,
    toa: float,
    duty_cycle: float,
) -> DutyCycleDecision:
    if toa <= 0:
        raise ValueError("toa must be positive")
    nxt = state.earliest(node, channel)
    if now >= nxt:
        state.commit(node, channel, now, toa, duty_cycle)
        return DutyCycleDecision(True, None)
    return DutyCycleDecision(False, nxt)


class Outcome(str, Enum):
    DELIVERED = "delivered"
    COLLIDED = "collided"
    SUSPECTED = "suspected-collision"


@dataclass(frozen=True)
class Transmission:
    channel_id: str
    start: float
    toa: float
    payload_bytes: int
    src: Hashable
    role: str = "data"
    snr_db: float | None = None
    dst: Hashable | None = None
    data: object = field(default=None, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.toa <= 0:
            raise ValueError("toa must be positive")
        if self.payload_bytes > MAX_PAYLOAD:
            raise ValueError(f"payload {self.payload_bytes} exceeds {MAX_PAYLOAD} bytes")

    @property
    def end(self) -> float:
        return self.start + self.toa

    def overlaps(self, other: "Transmission") -> bool:
        return (
            self.channel_id == other.channel_id
            and self.start < other.end
            and other.start < self.end
        )


class Delivery(NamedTuple):
    outcome: Outcome
    snr_db: float | None


def _db_to_lin(db: float) -> float:
    return 10.0 ** (db / 10.0)


def resolve_deliveries(
    active: Sequence[Transmission],
    capture: bool = False,
    snr_threshold_db: float = SNR_THRESHOLD_DB,
) -> list[Delivery]:
    """Outcome for each transmission, aligned with ``active``.

    Without capture, any time overlap on the same channel destroys both
    frames. With capture, the strongest frame of an overlap decodes at its
    interference-degraded SNR and is flagged if that falls under the
    threshold.
    """
    out: list[Delivery] = []
    for i, tx in enumerate(active):
        others = [o for j, o in enumerate(active) if j != i and tx.overlaps(o)]
        if not others:
            out.append(Delivery(Outcome.DELIVERED, tx.snr_db))
            continue
        if not capture or tx.snr_db is None or any(o.snr_db is None for o in others):
            out.append(Delivery(Outcome.COLLIDED, None))
            continue
        if any(o.snr_db >= tx.snr_db for o in others):
            out.append(Delivery(Outcome.COLLIDED, None))
            continue
        interference = sum(_db_to_lin(o.snr_db) for o in others)
        sinr = 10.0 * math.log10(_db_to_lin(tx.snr_db) / (1.0 + interference))
        outcome = Outcome.DELIVERED if sinr >= snr_threshold_db else Outcome.SUSPECTED
        out.append(Delivery(outcome, sinr))
    return out


def node_snr_db(base_snr_db: float, position: tuple[float, float] | None = None,
                gateway: tuple[float, float] = (0.0, 0.0), exponent: float = 2.7,
                ref_distance: float = 100.0) -> float:
    """Configured SNR with an optional log-distance attenuation term."""
    if position is None:
        return base_snr_db
    d = max(math.dist(position, gateway), ref_distance)
    return base_snr_db - 10.0 * exponent * math.log10(d / ref_distance)
