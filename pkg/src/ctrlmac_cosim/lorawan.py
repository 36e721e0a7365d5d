"""LoRaWAN baselines.

Plain LoRaWAN sends unconfirmed Class A uplinks with pure ALOHA and never
retries. LoRaWAN++ asks for an acknowledgement on every uplink and retries
up to eight times after a randomised backoff. Both push actuation updates
to always-listening Class C actuators using the Ctrl-MAC frame body behind
a LoRaWAN header.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Hashable, Mapping

from .ctrlmac import Sample, actuation_transmission
from .phy import (
    LORAWAN_HEADER_BYTES,
    SENSOR_PAYLOAD_BYTES,
    ChannelPlan,
    DutyCycleState,
    Transmission,
    time_on_air,
)
from .simcore import RngStream

UPLINK_BYTES = LORAWAN_HEADER_BYTES + SENSOR_PAYLOAD_BYTES
ACK_BYTES = LORAWAN_HEADER_BYTES


@dataclass(frozen=True)
class LoRaWanConfig:
    confirmed: bool = False
    ack_timeout: float = 1.0
    backoff: tuple[float, float] = (1.0, 3.0)
    max_attempts: int = 8

    def __post_init__(self) -> None:
        lo, hi = self.backoff
        if not 0 <= lo <= hi:
            raise ValueError(f"bad backoff interval {self.backoff}")
        if self.max_attempts < 1 or self.ack_timeout <= 0:
            raise ValueError("need max_attempts >= 1 and ack_timeout > 0")

    @property
    def worst_case_delay(self) -> float:
        return self.max_attempts * (self.ack_timeout + self.backoff[1])


@dataclass(frozen=True)
class AlohaNodeState:
    pending: Sample | None = None  # freshest sample not yet on the air
    inflight: Sample | None = None  # sample carried by the current attempt
    retry_count: int = 0
    awaiting_ack_until: float | None = None

    def __post_init__(self) -> None:
        if self.retry_count < 0:
            raise ValueError("negative retry count")

    @property
    def busy(self) -> bool:
        return self.inflight is not None or self.awaiting_ack_until is not None


def offer(state: AlohaNodeState, sample: Sample) -> tuple[AlohaNodeState, Sample | None]:
    """Install a fresh sample, returning the one it displaces."""
    return replace(state, pending=sample), state.pending


def aloha_uplink(
    state: AlohaNodeState,
    now: float,
    node: Hashable,
    plan: ChannelPlan,
    dc: DutyCycleState,
    stream: RngStream,
    payload_bytes: int = UPLINK_BYTES,
) -> Transmission:
    """Plan the next uplink on a uniformly drawn data channel.

    The frame leaves at ``now`` or, if gated, when the channel's duty cycle
    releases. The duty-cycle budget is committed here.
    """
    channels = plan.data_channels
    if not channels:
        raise ValueError("channel plan has no data channel")
    ch = channels[stream.uniform_int(1, len(channels)) - 1]
    toa = time_on_air(payload_bytes, plan, ch)
    start = max(now, dc.earliest(node, ch))
    dc.commit(node, ch, start, toa, plan[ch].duty_cycle)
    return Transmission(ch, start, toa, payload_bytes, node, role="data", data=state.pending)


def start_attempt(state: AlohaNodeState, tx_end: float, cfg: LoRaWanConfig) -> AlohaNodeState:
    """The planned frame goes on the air carrying the freshest sample."""
    if state.pending is None:
        raise ValueError("no sample to send")
    return AlohaNodeState(
        pending=None,
        inflight=state.pending,
        retry_count=state.retry_count + 1,
        awaiting_ack_until=tx_end + cfg.ack_timeout if cfg.confirmed else None,
    )


@dataclass(frozen=True)
class Acked:
    sample: Sample


@dataclass(frozen=True)
class Retry:
    at: float


@dataclass(frozen=True)
class Dropped:
    sample: Sample


@dataclass(frozen=True)
class Finished:
    sample: Sample


Outcome = Acked | Retry | Dropped | Finished


def confirmed_uplink(
    state: AlohaNodeState, acked: bool, now: float, stream: RngStream, cfg: LoRaWanConfig
) -> tuple[AlohaNodeState, Outcome]:
    """Decide what follows an attempt once its acknowledgement window has closed.

    A newer sample that arrived meanwhile replaces the payload of the retry
    without resetting the attempt counter.
    """
    sent = state.inflight
    if sent is None:
        raise ValueError("no attempt in flight")
    if not cfg.confirmed:
        return replace(state, inflight=None, retry_count=0, awaiting_ack_until=None), Finished(sent)
    if acked:
        return AlohaNodeState(pending=state.pending), Acked(sent)
    if state.retry_count >= cfg.max_attempts:
        return AlohaNodeState(pending=state.pending), Dropped(state.pending or sent)
    wait = stream.uniform(*cfg.backoff)
    pending = state.pending or sent
    return (
        AlohaNodeState(pending=pending, inflight=None, retry_count=state.retry_count,
                       awaiting_ack_until=None),
        Retry(now + wait),
    )


def plan_ack(
    rx_end: float, cfg: LoRaWanConfig, plan: ChannelPlan, dc: DutyCycleState,
    channel: str, src: Hashable = "gateway",
) -> Transmission | None:
    """Gateway acknowledgement for an uplink that ended at ``rx_end``.

    The ack must be fully received before the node's window closes;
    otherwise the duty cycle has starved it and nothing is sent.
    """
    toa = time_on_air(ACK_BYTES, plan, channel)
    start = max(rx_end, dc.earliest(src, channel))
    if start + toa > rx_end + cfg.ack_timeout:
        return None
    dc.commit(src, channel, start, toa, plan[channel].duty_cycle)
    return Transmission(channel, start, toa, ACK_BYTES, src, role="ack")


def gateway_actuation_downlink(
    outbox: Mapping[int, int], now: float, plan: ChannelPlan, dc: DutyCycleState,
    channel: str = "actuation", src: Hashable = "gateway",
) -> Transmission | None:
    return actuation_transmission(outbox, now, plan, dc, channel, src,
                                  header_bytes=LORAWAN_HEADER_BYTES)
