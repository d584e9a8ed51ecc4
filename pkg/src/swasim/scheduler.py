"""Offline construction and validation of TT schedules.

The scheduler is a greedy list scheduler: flows are placed one at a time in
decreasing-period order and each hop gets the earliest offset on the
granularity grid that respects store-and-forward precedence and does not
collide with anything already placed on the same output port.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .jitter import check_self_recovery, hyperperiod
from .model import (
    FlowSpec, LinkSchedule, TimeNs, Topology, arrival_window, reception_time, transmission_time,
)

DEFAULT_GRANULARITY = 1024


class SchedulingInfeasible(Exception):
    def __init__(self, message: str, diagnostics: Sequence[str] = ()):
        self.diagnostics = list(diagnostics)
        super().__init__(message if not self.diagnostics else message + ": " + "; ".join(self.diagnostics))


@dataclass
class ValidationReport:
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def __bool__(self):
        return self.ok


def periodic_overlap(o1: TimeNs, p1: TimeNs, t1: TimeNs, o2: TimeNs, p2: TimeNs, t2: TimeNs) -> bool:
    """Whether two strictly periodic transmissions ever share the wire.

    Relative phases of the two sequences take exactly the values congruent to
    ``o2 - o1`` modulo gcd(p1, p2), so checking the nearest one each way suffices.
    """
    g = math.gcd(p1, p2)
    d = (o2 - o1) % g
    return d < t1 or g - d < t2


@dataclass(frozen=True)
class _Slot:
    flow_id: int
    offset: TimeNs
    period: TimeNs
    tx: TimeNs


def _ceil_to(value: int, grid: int) -> int:
    return -(-value // grid) * grid


def _hop_links(topology: Topology, flow: FlowSpec):
    return [topology.link_between(u, v) for u, v in flow.links]


def schedule(topology: Topology, flows: Iterable[FlowSpec], hop_slack: TimeNs = 0,
             granularity: TimeNs = DEFAULT_GRANULARITY, enforce_recovery: bool = True,
             c: Optional[TimeNs] = None) -> list[LinkSchedule]:
    """Assign an offset to every (flow, non-sink vertex) pair.

    ``hop_slack`` is extra time reserved between the end of reception and the
    departure at each switch; it is what gives copies room to overtake.
    """
    flows = sorted(flows, key=lambda f: (-f.period, f.flow_id))
    if not flows:
        return []
    for f in flows:
        topology.check_flow(f)
    ports: dict[tuple[str, int], list[_Slot]] = {}
    result: list[LinkSchedule] = []
    mu = topology.sync_accuracy

    def place(vertex: str, port: int, earliest: TimeNs, flow: FlowSpec, tx: TimeNs) -> TimeNs:
        placed = ports.setdefault((vertex, port), [])
        offset = _ceil_to(earliest, granularity)
        # any conflict-free phase exists within one period of the earliest point
        limit = offset + flow.period
        while offset < limit:
            clash = next((s for s in placed
                          if periodic_overlap(s.offset, s.period, s.tx, offset, flow.period, tx)), None)
            if clash is None:
                placed.append(_Slot(flow.flow_id, offset, flow.period, tx))
                return offset
            offset += granularity
        raise SchedulingInfeasible(
            f"flow {flow.flow_id}: no free slot on {vertex}:{port}",
            [f"flow {s.flow_id} at offset {s.offset} (period {s.period})" for s in placed])

    for flow in flows:
        links = _hop_links(topology, flow)
        rows: list[LinkSchedule] = []
        tx0 = transmission_time(flow.length_bytes, links[0].rate)
        offset = place(flow.source, links[0].src_port, 0, flow, tx0)
        rows.append(LinkSchedule(flow.flow_id, flow.source, links[0].src_port, offset))
        for hop in range(1, len(links)):
            prev, link = links[hop - 1], links[hop]
            pdelay = topology.vertices[prev.src].pdelay
            start, end = arrival_window(offset, pdelay, prev.link_delay, mu, topology.anchoring)
            tx_in = reception_time(flow.length_bytes, prev.rate)
            tx_out = transmission_time(flow.length_bytes, link.rate)
            offset = place(link.src, link.src_port, end + tx_in + hop_slack, flow, tx_out)
            rows.append(LinkSchedule(flow.flow_id, link.src, link.src_port, offset,
                                     prev.dst_port, start, end))
        if enforce_recovery:
            cc = c if c is not None else topology.min_copy_hop_time(flow)
            check = check_self_recovery(flow, [r.offset for r in rows], cc)
            if not check.ok:
                raise SchedulingInfeasible("self-recovery condition violated", [check.message])
        result.extend(rows)
    return result


def validate(topology: Topology, flows: Iterable[FlowSpec], schedules: Sequence[LinkSchedule],
             enforce_recovery: bool = False, c: Optional[TimeNs] = None) -> ValidationReport:
    """Check a schedule: windows, precedence, port contention and (optionally) self-recovery."""
    report = ValidationReport()
    problems = report.problems
    flows = list(flows)
    by_key: dict[tuple[int, str], LinkSchedule] = {}
    for s in schedules:
        key = (s.flow_id, s.vertex)
        if key in by_key:
            problems.append(f"flow {s.flow_id}: two schedules at {s.vertex}")
        by_key[key] = s
    known = {f.flow_id for f in flows}
    for s in schedules:
        if s.flow_id not in known:
            problems.append(f"schedule for unknown flow {s.flow_id} at {s.vertex}")

    port_slots: dict[tuple[str, int], list[_Slot]] = {}
    mu = topology.sync_accuracy
    for flow in flows:
        try:
            topology.check_flow(flow)
        except ValueError as exc:
            problems.append(str(exc))
            continue
        links = _hop_links(topology, flow)
        offsets = []
        for hop, link in enumerate(links):
            row = by_key.get((flow.flow_id, link.src))
            if row is None:
                problems.append(f"flow {flow.flow_id}: no schedule at {link.src}")
                break
            offsets.append(row.offset)
            if row.output_port != link.src_port:
                problems.append(f"flow {flow.flow_id} at {link.src}: output port {row.output_port}, "
                                f"link uses {link.src_port}")
            tx_out = transmission_time(flow.length_bytes, link.rate)
            port_slots.setdefault((link.src, link.src_port), []).append(
                _Slot(flow.flow_id, row.offset, flow.period, tx_out))
            if hop == 0:
                if not row.is_source:
                    problems.append(f"flow {flow.flow_id}: source {link.src} has an arrival window")
                continue
            prev = links[hop - 1]
            prev_row = by_key.get((flow.flow_id, prev.src))
            if row.is_source:
                problems.append(f"flow {flow.flow_id} at {link.src}: missing arrival window")
                continue
            if row.input_port != prev.dst_port:
                problems.append(f"flow {flow.flow_id} at {link.src}: input port {row.input_port}, "
                                f"link uses {prev.dst_port}")
            if prev_row is not None:
                expect = arrival_window(prev_row.offset, topology.vertices[prev.src].pdelay,
                                        prev.link_delay, mu, topology.anchoring)
                if (row.arrival_start, row.arrival_end) != expect:
                    problems.append(f"flow {flow.flow_id} at {link.src}: arrival window "
                                    f"[{row.arrival_start}, {row.arrival_end}] != recomputed {list(expect)}")
            tx_in = reception_time(flow.length_bytes, prev.rate)
            if row.arrival_end + tx_in > row.offset:
                problems.append(f"flow {flow.flow_id} at {link.src}: offset {row.offset} precedes "
                                f"full reception at {row.arrival_end + tx_in}")
        else:
            if enforce_recovery:
                cc = c if c is not None else topology.min_copy_hop_time(flow)
                check = check_self_recovery(flow, offsets, cc)
                if not check.ok:
                    problems.append("self-recovery: " + check.message)

    for (vertex, port), slots in sorted(port_slots.items()):
        for i, a in enumerate(slots):
            for b in slots[i + 1:]:
                if periodic_overlap(a.offset, a.period, a.tx, b.offset, b.period, b.tx):
                    problems.append(f"{vertex}:{port}: flows {a.flow_id} and {b.flow_id} overlap")
        if slots:
            try:
                hyperperiod([s.period for s in slots])
            except ValueError as exc:
                problems.append(f"{vertex}:{port}: {exc}")
    return report
