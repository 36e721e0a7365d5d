"""Run metrics and deterministic CSV output."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .cosim import SimLog


@dataclass
class MetricsReport:
    e2e_pdr: float = 0.0
    e2e_delay_mean: float = 0.0
    e2e_delay_max: float = 0.0
    ul_reliability: float = 0.0
    ul_reliability_over_100: bool = False
    overshoot_pct: dict[str, float] = field(default_factory=dict)
    events_per_minute: dict[str, float] = field(default_factory=dict)
    drops: int = 0
    per_node_rtt: dict[str, float] = field(default_factory=dict)
    n_events: int = 0
    n_delivered: int = 0
    empty: bool = True

    @property
    def critical(self) -> bool:
        return any(v > 50.0 for v in self.overshoot_pct.values())

    def as_row(self, **prefix) -> dict:
        row = dict(prefix)
        phases = list(self.events_per_minute)
        single = phases == ["all"]
        for ph in phases:
            key = "" if single else f"_{ph}"
            row[f"events_per_minute{key}"] = self.events_per_minute[ph]
            row[f"overshoot_pct{key}"] = self.overshoot_pct.get(ph, 0.0)
        row.update(
            e2e_pdr=self.e2e_pdr,
            e2e_delay_mean=self.e2e_delay_mean,
            e2e_delay_max=self.e2e_delay_max,
            ul_reliability=self.ul_reliability,
            drops=self.drops,
            events=self.n_events,
        )
        return row


def compute_metrics(log: SimLog) -> MetricsReport:
    """Metrics over the whole run.

    PDR counts unique events whose actuation update reached the actuator;
    delay runs from sensor sampling to that reception. UL reliability is
    acknowledged events over events delivered at the actuators, reported as
    computed and flagged when it exceeds 100.
    """
    rep = MetricsReport()
    spec = log.spec
    duration = spec.duration
    for name, lo, hi in log.phases:
        span = max(min(hi, duration) - lo, 0.0)
        count = sum(1 for e in log.events if lo <= e.generated_at < hi)
        rep.events_per_minute[name] = 60.0 * count / span if span > 0 else 0.0
        peaks = log.peak_excess.get(name, [])
        finite = [p for p in peaks if math.isfinite(p)]
        rep.overshoot_pct[name] = 100.0 * max(max(finite), 0.0) if finite else 0.0
    events = log.events
    rep.n_events = len(events)
    if not events:
        return rep
    rep.empty = False
    delivered = [e for e in events if e.fate == "delivered"]
    rep.n_delivered = len(delivered)
    rep.e2e_pdr = 100.0 * len(delivered) / len(events)
    if delivered:
        delays = np.array([e.delay for e in delivered])
        rep.e2e_delay_mean = float(delays.mean())
        rep.e2e_delay_max = float(delays.max())
        rep.ul_reliability = 100.0 * sum(e.acked for e in events) / len(delivered)
        rep.ul_reliability_over_100 = rep.ul_reliability > 100.0
        by_node: dict[str, list[float]] = {}
        for e in delivered:
            by_node.setdefault(e.node, []).append(e.delay)
        rep.per_node_rtt = {n: float(np.mean(v)) for n, v in sorted(by_node.items())}
    rep.drops = sum(1 for e in events if e.fate == "dropped")
    return rep


def inter_event_times(log: SimLog, t_from: float, h: float | None, seed: int = 0) -> np.ndarray:
    """Network-wide gaps between sensor events generated after ``t_from``.

    Events sit on the sampling grid; with ``h`` given, each event time is
    spread uniformly over the sampling interval that produced it before
    taking differences.
    """
    t = np.array([e.generated_at for e in log.events if e.generated_at >= t_from])
    if h:
        t = t - np.random.default_rng(seed).uniform(0.0, h, t.size)
    t.sort()
    return np.diff(t)


def exponential_ks(gaps: np.ndarray) -> tuple[float, float]:
    """KS statistic and p-value against an exponential with the sample mean."""
    if gaps.size < 2:
        raise ValueError("need at least two gaps")
    res = stats.kstest(gaps, "expon", args=(0.0, float(gaps.mean())))
    return float(res.statistic), float(res.pvalue)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if not math.isfinite(v):
            raise ValueError(f"refusing to write non-finite value {v}")
        return f"{float(v):.6g}"
    return str(v)


def emit_csv(rows: Iterable[Mapping], out: str | os.PathLike | IO[str] | None = None,
             columns: Sequence[str] | None = None) -> str:
    """Write rows with a header and six significant digits; returns the text.

    Column order is ``columns`` if given, otherwise first-seen key order.
    """
    rows = list(rows)
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    text = buf.getvalue()
    if out is None:
        return text
    if hasattr(out, "write"):
        out.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
