"""Safe jitter range of held copies and the self-recovery condition.

For flows sharing an output port, the gap g(i, j) is the shortest time from a
departure of flow j to the next departure of flow i (g(i, i) is the period of
i). A held copy of flow i released no earlier than ``upper_i`` before its TT
departure never overlaps a TT frame or another held copy, where
``upper_i = min_j (g(i, j) - C_j)``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .model import FlowSpec, LinkSchedule, TimeNs, Topology, transmission_time

MAX_HYPERPERIOD = 2**64 - 1


class JitterAnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class PortFlow:
    flow_id: int
    period: TimeNs
    offset: TimeNs
    tx_time: TimeNs


@dataclass(frozen=True)
class SafeJitter:
    flow_id: int
    upper: TimeNs
    # (flow_id of j, g_ij) attaining the minimum; None when the period bound wins
    contributing_pair: Optional[tuple[int, TimeNs]]
    # every candidate g_ij - C_j, keyed by flow_id of j
    terms: dict = field(default_factory=dict)


def hyperperiod(periods: Sequence[TimeNs]) -> TimeNs:
    h = math.lcm(*periods)
    if h > MAX_HYPERPERIOD:
        raise JitterAnalysisError(f"hyperperiod {h} does not fit in 64 bits")
    return h


def _departures(flow: PortFlow, h: TimeNs) -> list[TimeNs]:
    return sorted((flow.offset + k * flow.period) % h for k in range(h // flow.period))


def check_conflict_free(flows: Sequence[PortFlow]) -> list[str]:
    """Overlapping transmissions on the shared port within one hyperperiod."""
    if not flows:
        return []
    h = hyperperiod([f.period for f in flows])
    intervals = []
    for f in flows:
        for d in _departures(f, h):
            intervals.append((d, d + f.tx_time, f.flow_id))
    intervals.sort()
    problems = []
    for (s1, e1, a), (s2, e2, b) in zip(intervals, intervals[1:]):
        if s2 < e1:
            problems.append(f"flows {a} and {b} overlap at {s2} ns")
    if intervals:
        # wrap-around of the last transmission into the next hyperperiod
        s_last, e_last, a = intervals[-1]
        s_first, _, b = intervals[0]
        if e_last > h + s_first:
            problems.append(f"flows {a} and {b} overlap across the hyperperiod boundary")
    return problems


def min_gap(i: int, j: int, flows: Sequence[PortFlow]) -> TimeNs:
    """Shortest distance from a departure of ``flows[j]`` strictly before a departure of ``flows[i]``."""
    fi, fj = flows[i], flows[j]
    if i == j:
        return fi.period
    h = hyperperiod([fi.period, fj.period])
    dj = _departures(fj, h)
    best = None
    for di in _departures(fi, h):
        idx = bisect.bisect_left(dj, di) - 1
        # nothing earlier in this hyperperiod: wrap to the last one of the previous
        gap = di - dj[idx] if idx >= 0 else di - (dj[-1] - h)
        if best is None or gap < best:
            best = gap
    return best


def safe_jitter_upper(flows: Sequence[PortFlow]) -> list[SafeJitter]:
    problems = check_conflict_free(flows)
    if problems:
        raise JitterAnalysisError("flow set is not conflict-free: " + "; ".join(problems))
    report = []
    for i, fi in enumerate(flows):
        upper, pair, terms = fi.period, None, {}
        for j, fj in enumerate(flows):
            gap = min_gap(i, j, flows)
            term = gap - fj.tx_time
            terms[fj.flow_id] = term
            if term < upper:
                upper, pair = term, (fj.flow_id, gap)
        report.append(SafeJitter(fi.flow_id, upper, pair, terms))
    return report


@dataclass(frozen=True)
class RecoveryCheck:
    ok: bool
    span: TimeNs
    limit: TimeNs
    # first link k whose prefix violates offset_k - offset_0 < period + k*C
    first_violation: Optional[int] = None
    message: str = ""

    def __bool__(self):
        return self.ok


def check_self_recovery(flow: FlowSpec, offsets: Sequence[TimeNs], c: TimeNs,
                        latency: Optional[TimeNs] = None) -> RecoveryCheck:
    """Self-recovery condition on the departure offsets along a flow's path.

    ``offsets[k]`` is the departure offset on the k-th link (k = 0 is the
    source); with n switches the condition is
    ``offsets[n] - offsets[0] < min(period + n*C, latency)``, and every prefix
    must satisfy ``offsets[k] - offsets[0] < period + k*C``.
    """
    n = len(offsets) - 1
    if latency is None:
        latency = flow.e2e_latency_bound
    limit = flow.period + n * c
    if latency is not None:
        limit = min(limit, latency)
    span = offsets[-1] - offsets[0]
    first = None
    for k, off in enumerate(offsets):
        if off - offsets[0] >= flow.period + k * c:
            first = k
            break
    ok = span < limit and first is None
    if span < limit:
        msg = f"flow {flow.flow_id}: {span} < {limit}"
    else:
        msg = f"flow {flow.flow_id}: offset span {span} >= {limit}"
    if first is not None:
        msg += f"; link {first} violates the per-link bound"
    return RecoveryCheck(ok, span, limit, first, msg)


def path_offsets(flow: FlowSpec, schedules: Sequence[LinkSchedule]) -> list[TimeNs]:
    by_vertex = {s.vertex: s.offset for s in schedules if s.flow_id == flow.flow_id}
    try:
        return [by_vertex[v] for v in flow.path[:-1]]
    except KeyError as exc:
        raise JitterAnalysisError(f"flow {flow.flow_id} has no schedule at {exc.args[0]}") from None


def last_hop_port_flows(topology: Topology, flows: Iterable[FlowSpec],
                        schedules: Sequence[LinkSchedule]) -> dict:
    """Flows grouped by the egress port of their last switch: (switch, port) -> [PortFlow]."""
    by_key = {(s.flow_id, s.vertex): s for s in schedules}
    groups: dict = {}
    for flow in sorted(flows, key=lambda f: f.flow_id):
        if not flow.switches:
            continue
        last = flow.switches[-1]
        row = by_key.get((flow.flow_id, last))
        if row is None:
            raise JitterAnalysisError(f"flow {flow.flow_id} has no schedule at {last}")
        link = topology.link_between(last, flow.destination)
        tx = transmission_time(flow.length_bytes, link.rate)
        groups.setdefault((last, row.output_port), []).append(
            PortFlow(flow.flow_id, flow.period, row.offset, tx))
    return groups
