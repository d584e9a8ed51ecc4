import dataclasses
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from oracles import random_tree_topology, tree_path
from swasim.jitter import check_self_recovery
from swasim.model import FlowSpec, Topology, Vertex, VertexKind
from swasim.scheduler import SchedulingInfeasible, periodic_overlap, schedule, validate
from swasim.testbed import reference_flows, reference_schedules, reference_topology


def brute_overlap(o1, p1, t1, o2, p2, t2):
    h = math.lcm(p1, p2)
    o1, o2 = o1 % p1, o2 % p2
    a = [(o1 + k * p1, o1 + k * p1 + t1) for k in range(-1, 2 * h // p1 + 1)]
    b = [(o2 + k * p2, o2 + k * p2 + t2) for k in range(-1, 2 * h // p2 + 1)]
    return any(s1 < e2 and s2 < e1 for s1, e1 in a for s2, e2 in b)


@given(st.integers(0, 5000), st.sampled_from([500, 1000, 2000, 4000]), st.integers(1, 400),
       st.integers(0, 5000), st.sampled_from([500, 1000, 2000, 4000]), st.integers(1, 400))
def test_periodic_overlap_matches_enumeration(o1, p1, t1, o2, p2, t2):
    assert periodic_overlap(o1, p1, t1, o2, p2, t2) == brute_overlap(o1, p1, t1, o2, p2, t2)


def test_reference_schedule_is_valid():
    report = validate(reference_topology(), reference_flows().values(), reference_schedules(),
                      enforce_recovery=True)
    assert report.ok, report.problems


def test_reference_windows_recompute_exactly():
    rows = {(s.flow_id, s.vertex): s for s in reference_schedules()}
    assert (rows[(1, "TTS-2")].arrival_start, rows[(1, "TTS-2")].arrival_end) == (22928, 23928)


def _mutate(rows, flow_id, vertex, **changes):
    return [dataclasses.replace(r, **changes) if (r.flow_id, r.vertex) == (flow_id, vertex) else r
            for r in rows]


def test_lowered_offset_breaks_precedence():
    rows = _mutate(reference_schedules(), 1, "TTS-2", offset=23000)
    report = validate(reference_topology(), reference_flows().values(), rows)
    assert any("precedes full reception" in p for p in report.problems)


def test_latency_bound_below_span_breaks_recovery():
    flows = reference_flows()
    flows[1] = dataclasses.replace(flows[1], e2e_latency_bound=60000)
    report = validate(reference_topology(), flows.values(), reference_schedules(), enforce_recovery=True)
    assert any("self-recovery" in p for p in report.problems)
    # not checked unless asked for
    assert validate(reference_topology(), flows.values(), reference_schedules()).ok


def test_shifted_window_and_port_conflict_reported():
    rows = _mutate(reference_schedules(), 2, "TTS-3", arrival_start=94600)
    report = validate(reference_topology(), reference_flows().values(), rows)
    assert any("arrival window" in p for p in report.problems)
    rows = _mutate(reference_schedules(), 2, "TTS-1", offset=22528 + 1024)
    rows = _mutate(rows, 2, "TTS-2", arrival_start=23952 + 1024 - 1024, arrival_end=24952)
    report = validate(reference_topology(), reference_flows().values(), rows)
    assert any("overlap" in p for p in report.problems)


def test_missing_schedule_reported():
    rows = [r for r in reference_schedules() if (r.flow_id, r.vertex) != (3, "TTS-2")]
    report = validate(reference_topology(), reference_flows().values(), rows)
    assert any("no schedule at TTS-2" in p for p in report.problems)


def test_schedule_reference_problem_is_valid():
    topo, flows = reference_topology(), reference_flows()
    rows = schedule(topo, flows.values())
    assert validate(topo, flows.values(), rows, enforce_recovery=True).ok
    assert len(rows) == 12
    for r in rows:
        if not r.is_source:
            assert r.arrival_end < r.offset
            assert r.offset % 1024 == 0


def test_hop_slack_delays_every_switch_hop():
    topo, flows = reference_topology(), reference_flows()
    tight = {(r.flow_id, r.vertex): r.offset for r in schedule(topo, flows.values())}
    loose = {(r.flow_id, r.vertex): r.offset for r in schedule(topo, flows.values(), hop_slack=20000)}
    assert all(loose[k] >= tight[k] for k in tight)
    assert loose[(1, "TTS-3")] > tight[(1, "TTS-3")]


def test_overloaded_port_is_infeasible():
    topo = Topology()
    topo.add_vertex(Vertex("A", VertexKind.END_SYSTEM, port_count=1))
    topo.add_vertex(Vertex("B", VertexKind.END_SYSTEM, port_count=1))
    topo.add_vertex(Vertex("S", VertexKind.SWITCH))
    topo.connect("A", 0, "S", 0)
    topo.connect("S", 1, "B", 0)
    flows = [FlowSpec(1, 12160, 128, ("A", "S", "B")), FlowSpec(2, 12160, 128, ("A", "S", "B"))]
    with pytest.raises(SchedulingInfeasible) as exc:
        schedule(topo, flows, granularity=1)
    assert exc.value.diagnostics


def test_single_flow_uncontended():
    topo = reference_topology()
    flow = FlowSpec(7, 1 << 20, 1500, ("IXIA-0", "TTS-1", "TTS-2", "IXIA-2"))
    rows = schedule(topo, [flow])
    assert validate(topo, [flow], rows).ok
    assert all(r.arrival_end < r.offset for r in rows if not r.is_source)


def test_recovery_enforcement_reports_infeasible():
    topo = reference_topology()
    flow = FlowSpec(1, 524288, 128, reference_flows()[1].path, e2e_latency_bound=20000)
    with pytest.raises(SchedulingInfeasible):
        schedule(topo, [flow])
    assert schedule(topo, [flow], enforce_recovery=False)


def _random_problem(rng):
    n_sw = rng.randint(1, 4)
    topo = random_tree_topology(rng, n_sw)
    ends = [f"E{i}" for i in range(1, n_sw + 1)] + ["B"]
    flows = []
    for fid in range(1, rng.randint(1, 6) + 1):
        src, dst = rng.sample(ends, 2)
        flows.append(FlowSpec(fid, 2 ** rng.randint(17, 20), rng.choice([64, 256, 1000]),
                              tree_path(topo, src, dst)))
    return topo, flows


@settings(max_examples=60, deadline=None)
@given(st.randoms(use_true_random=False), st.sampled_from([0, 3000, 30000]))
def test_generated_schedules_validate(rng, slack):
    topo, flows = _random_problem(rng)
    try:
        rows = schedule(topo, flows, hop_slack=slack)
    except SchedulingInfeasible:
        return
    assert validate(topo, flows, rows, enforce_recovery=True).ok
    # the per-link consequence holds on every prefix
    for flow in flows:
        offsets = [r.offset for v in flow.path[:-1] for r in rows
                   if r.flow_id == flow.flow_id and r.vertex == v]
        c = topo.min_copy_hop_time(flow)
        assert check_self_recovery(flow, offsets, c).first_violation is None
        for k in range(len(offsets)):
            assert offsets[k] - offsets[0] < flow.period + k * c


def test_schedule_is_deterministic():
    rng = random.Random(11)
    topo, flows = _random_problem(rng)
    first = schedule(topo, flows, enforce_recovery=False)
    assert schedule(topo, list(reversed(flows)), enforce_recovery=False) == first
