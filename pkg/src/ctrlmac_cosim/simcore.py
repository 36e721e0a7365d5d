"""Deterministic discrete-event engine and seeded random streams."""

from __future__ import annotations

import heapq
import itertools
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np


class EventKind(str, Enum):
    PLANT_SAMPLE = "plant-sample"
    RRM_BROADCAST = "rrm-broadcast"
    TX_START = "tx-start"
    TX_END = "tx-end"
    DC_RELEASE = "dc-release"
    DEMAND_CHANGE = "demand-change"
    FAULT_TOGGLE = "fault-toggle"
    TIMER = "timer"  # protocol timers (ack windows, retry backoff)


class CausalityError(RuntimeError):
    """Raised when an event is scheduled before the current simulation time."""


@dataclass(order=True)
class SimEvent:
    fire_time: float
    sequence_no: int = field(default=-1)
    kind: EventKind = field(default=EventKind.TX_END, compare=False)
    target: Any = field(default=None, compare=False)
    data: Any = field(default=None, compare=False)


class EventQueue:
    """Min-heap of :class:`SimEvent` ordered by ``(fire_time, sequence_no)``."""

    def __init__(self) -> None:
        self._heap: list[SimEvent] = []
        self._counter = itertools.count()
        self.now = 0.0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, ev: SimEvent) -> SimEvent:
        if ev.fire_time < self.now:
            raise CausalityError(
                f"event {ev.kind} at t={ev.fire_time!r} is before now={self.now!r}"
            )
        ev.sequence_no = next(self._counter)
        heapq.heappush(self._heap, ev)
        return ev

    def at(self, t: float, kind: EventKind, target: Any = None, data: Any = None) -> SimEvent:
        return self.schedule(SimEvent(float(t), kind=kind, target=target, data=data))

    def peek_time(self) -> float | None:
        return self._heap[0].fire_time if self._heap else None

    def pop(self) -> SimEvent:
        ev = heapq.heappop(self._heap)
        self.now = ev.fire_time
        return ev


def schedule(queue: EventQueue, ev: SimEvent) -> None:
    queue.schedule(ev)


def _stream_key(stream_id: Any) -> int:
    return zlib.crc32(repr(stream_id).encode("utf-8"))


class RngStream:
    """Random stream for one entity, derived from a master seed.

    The stream depends only on ``(seed, stream_id)``, so adding entities
    never perturbs the draws of existing ones.
    """

    def __init__(self, seed: int, stream_id: Any) -> None:
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = stream_id
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32, _stream_key(stream_id)])
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform_int(self, a: int, b: int) -> int:
        if b < a:
            raise ValueError(f"uniform-int needs a <= b, got [{a}, {b}]")
        return int(self._gen.integers(a, b + 1))

    def uniform(self, a: float, b: float) -> float:
        if b < a:
            raise ValueError(f"uniform-real needs a <= b, got [{a}, {b}]")
        return float(self._gen.uniform(a, b))

    def exponential(self, mean: float) -> float:
        if not mean > 0:
            raise ValueError(f"exponential mean must be positive, got {mean}")
        return float(self._gen.exponential(mean))

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        return float(self._gen.normal(mean, std))


class RngRegistry:
    """Lazily creates one :class:`RngStream` per entity id."""

    def __init__(self, seed: int) -> None:
        self.seed = seed
        self._streams: dict[Any, RngStream] = {}

    def __call__(self, stream_id: Any) -> RngStream:
        s = self._streams.get(stream_id)
        if s is None:
            s = self._streams[stream_id] = RngStream(self.seed, stream_id)
        return s


def draw(stream: RngStream, dist: tuple) -> float | int:
    """Draw one sample. ``dist`` is ``("uniform-int", a, b)``,
    ``("uniform-real", a, b)`` or ``("exponential", mean)``."""
    kind, *params = dist
    if kind == "uniform-int":
        return stream.uniform_int(*params)
    if kind == "uniform-real":
        return stream.uniform(*params)
    if kind == "exponential":
        return stream.exponential(*params)
    raise ValueError(f"unknown distribution {kind!r}")
