import dataclasses

import pytest

from swasim.engine import (
    DisturbanceSpec, FaultSpec, ScenarioSpec, SimConfig, Simulation, SimulationFault,
    disturbance_times, generate_disturbance, run,
)
from swasim.model import ConfigError, FlowSpec, LinkSchedule, Topology, Vertex, VertexKind, reception_time
from swasim.pipeline import DropReason
from swasim.scenarios import apply_preset, sweep, sweep_violations, with_arm
from swasim.testbed import reference_flows, reference_schedules, reference_topology

# departure at TTS-3 plus one hop of processing and cable delay, from the source departure
PRE_TT = {1: 67584 + 400, 2: 126976 + 400 - 28672, 3: 227328 + 400 - 67584}


def reference(**scenario) -> SimConfig:
    scenario.setdefault("periods", 12)
    return SimConfig(reference_topology(), reference_flows(), reference_schedules(), ScenarioSpec(**scenario))


def one_switch(offset=30000, length=128):
    topo = Topology()
    topo.add_vertex(Vertex("A", VertexKind.END_SYSTEM, port_count=1))
    topo.add_vertex(Vertex("B", VertexKind.END_SYSTEM, port_count=1))
    topo.add_vertex(Vertex("S", VertexKind.SWITCH))
    topo.connect("A", 0, "S", 0)
    topo.connect("S", 1, "B", 0)
    flow = FlowSpec(1, 100_000, length, ("A", "S", "B"))
    rows = [LinkSchedule(1, "A", 0, 0), LinkSchedule(1, "S", 1, offset, 0, 400, 1400)]
    return SimConfig(topo, {1: flow}, rows, ScenarioSpec(periods=10, warmup_hyperperiods=1))


# -- closed forms ------------------------------------------------------------

def test_one_switch_latencies():
    cfg = one_switch()
    pre = run(with_arm(cfg, "pre")).flows[1]
    swa = run(with_arm(cfg, "swa")).flows[1]
    assert set(pre.latencies.values()) == {30000 + 400}
    assert set(swa.latencies.values()) == {400 + reception_time(128) + 400}
    assert pre.delivered == swa.delivered == 10
    assert swa.copy_wins == 10


def test_one_switch_tt_frame_dropped_by_filter_when_copy_wins():
    res = run(with_arm(one_switch(), "swa"))
    assert res.drops_for(1)[DropReason.FILTER_LATE.value] == 10


@pytest.mark.parametrize("rate", [0, 50, 100])
def test_copies_off_latency_is_constant(rate):
    cfg = apply_preset(reference(), "two", rate)
    res = run(with_arm(cfg, "pre"))
    for fid, fr in res.flows.items():
        lo, _, hi, jitter = fr.stats()
        assert lo == hi == PRE_TT[fid] and jitter == 0


def test_quiet_network_copies_beat_tt():
    res = run(reference())
    for fid, fr in res.flows.items():
        assert fr.stats()[2] < PRE_TT[fid]
        assert fr.copy_wins == fr.delivered
    assert not res.violations()


# -- disturbance --------------------------------------------------------------

def test_disturbance_spacing():
    times = list(disturbance_times(10, 100, 7040, 0, 1_000_000))
    assert times[:3] == [0, 70400, 140800]
    assert list(disturbance_times(0, 100, 7040, 0, 1_000_000)) == []
    # non-integer spacing stays exact on average
    times = list(disturbance_times(30, 100, 7040, 5, 10_000_000))
    assert times[300] - times[0] == 300 * 7040 * 100 // 30
    with pytest.raises(ValueError):
        next(disturbance_times(101, 100, 7040, 0, 1))


def test_generated_disturbance_is_seeded():
    spec = DisturbanceSpec("IXIA-1", 40, "broadcast")
    topo = reference_topology()
    first = [t for t, _ in generate_disturbance(spec, topo, 3, 2_000_000)]
    assert first == [t for t, _ in generate_disturbance(spec, topo, 3, 2_000_000)]
    assert first != [t for t, _ in generate_disturbance(spec, topo, 4, 2_000_000)]
    assert all(b - a in (17600,) for a, b in zip(first, first[1:]))


def test_disturbance_spec_validation():
    with pytest.raises(ConfigError):
        DisturbanceSpec("IXIA-1", 10, "multicast")
    with pytest.raises(ConfigError):
        DisturbanceSpec("IXIA-1", 10, "unicast")
    with pytest.raises(ConfigError):
        DisturbanceSpec("IXIA-1", -1)


def test_saturating_same_priority_disturbance_overflows_queues():
    res = run(apply_preset(reference(), "two", 100))
    overflow = sum(n for (_, _, reason), n in res.drops.items() if reason == DropReason.QUEUE_OVERFLOW.value)
    assert overflow > 0
    assert not res.violations()


def test_unicast_disturbance_reaches_its_sink_only():
    res = run(apply_preset(reference(), "three", 30))
    assert res.be_sent > 0 and res.be_delivered == res.be_sent


def test_broadcast_floods_every_other_port():
    res = run(apply_preset(reference(), "two", 10))
    # IXIA-0, IXIA-2 and IXIA-3 each receive every frame at this low rate
    assert res.be_delivered == 3 * res.be_sent


# -- invariants across arms -----------------------------------------------------

def test_copies_never_slow_any_frame_down():
    steps = sweep(reference(), "two", [0, 60, 100], seed=5, periods=12)
    assert sweep_violations(steps) == []


def test_tt_departures_do_not_depend_on_copies():
    cfg = apply_preset(reference(), "three", 80)
    assert run(with_arm(cfg, "pre")).tt_fires == run(with_arm(cfg, "swa")).tt_fires


def test_runs_are_deterministic():
    cfg = apply_preset(reference(seed=9), "two", 70)
    a, b = run(cfg, trace=True), run(cfg, trace=True)
    assert a == b


def test_trace_only_when_asked():
    assert run(reference(periods=2)).trace is None
    trace = run(reference(periods=2), trace=True).trace
    assert {entry[2] for entry in trace} >= {"depart", "deliver", "drop"}


# -- hold filter ----------------------------------------------------------------

def test_hold_releases_copy_exactly_jitter_early():
    res = run(reference(jitter={1: 10_000, 2: 10_000, 3: 10_000}), trace=True)
    for fid, fr in res.flows.items():
        assert set(fr.latencies.values()) == {PRE_TT[fid] - 10_000}
    assert any(entry[2] == "hold" for entry in res.trace)


def test_tt_only_mode_matches_copies_off():
    cfg = apply_preset(reference(jitter={1: -1, 2: -1, 3: -1}), "one", 40)
    swa, pre = run(cfg), run(with_arm(cfg, "pre"))
    assert {f: r.latencies for f, r in swa.flows.items()} == {f: r.latencies for f, r in pre.flows.items()}


def test_large_jitter_behaves_like_no_hold():
    free = run(reference())
    loose = run(reference(jitter={1: 10**9, 2: 10**9, 3: 10**9}))
    assert {f: r.latencies for f, r in free.flows.items()} == {f: r.latencies for f, r in loose.flows.items()}


# -- faults ---------------------------------------------------------------------

def fault_run(*faults):
    return run(reference(warmup_hyperperiods=0, periods=16, faults=list(faults)))


def test_dropped_copy_recovers_on_next_frame():
    m = 5
    fr = fault_run(FaultSpec("TTS-3", 1, frozenset({m}))).flows[1]
    quiet = fault_run().flows[1]
    # the damaged frame still arrives, via TT forwarding; the next one is a copy again
    assert fr.latencies[m] == PRE_TT[1] > quiet.latencies[m]
    assert fr.latencies[m + 1] == quiet.latencies[m + 1]
    assert fr.delivered == quiet.delivered


def test_first_switch_faults_only_shorten_the_copy_path():
    fr = fault_run(FaultSpec("TTS-1", 1)).flows[1]
    lat = set(fr.latencies.values())
    assert len(lat) == 1 and lat.pop() < PRE_TT[1]
    assert fr.copy_wins == fr.delivered


def test_last_switch_faults_give_plain_tt_forwarding():
    res = fault_run(FaultSpec("TTS-3", 1), FaultSpec("TTS-3", 2), FaultSpec("TTS-3", 3))
    for fid, fr in res.flows.items():
        assert set(fr.latencies.values()) == {PRE_TT[fid]}
        assert fr.copy_wins == 0 and fr.max_copies == 0


@pytest.mark.parametrize("switch", ["TTS-1", "TTS-2", "TTS-3"])
def test_every_single_copy_loss_is_recovered(switch):
    for fid in (1, 2, 3):
        for seq in range(1, 7):
            res = fault_run(FaultSpec(switch, fid, frozenset({seq})))
            assert not res.gap_drops, (switch, fid, seq)
            assert not res.violations()
            fr = res.flows[fid]
            assert sorted(fr.latencies) == list(range(1, fr.delivered + 1))


def test_inject_fault_errors():
    sim = Simulation(reference())
    with pytest.raises(ConfigError):
        sim.inject_fault("TTS-9", 1)
    with pytest.raises(ConfigError):
        sim.inject_fault("TTS-1", 7)
    sim.inject_fault("TTS-2", 1, [3])
    sim.run()
    with pytest.raises(RuntimeError):
        sim.inject_fault("TTS-2", 1, [4])
    with pytest.raises(RuntimeError):
        sim.run()


# -- configuration errors ----------------------------------------------------------

def test_colliding_source_departures_raise():
    rows = [dataclasses.replace(r, offset=0) if r.is_source else r for r in reference_schedules()]
    cfg = SimConfig(reference_topology(), reference_flows(), rows, ScenarioSpec(periods=2))
    with pytest.raises(SimulationFault):
        run(cfg)


def test_priority_out_of_range():
    with pytest.raises(ConfigError):
        Simulation(reference(copy_priority=2))


def test_missing_source_schedule():
    rows = [r for r in reference_schedules() if not (r.is_source and r.flow_id == 2)]
    with pytest.raises(ConfigError):
        Simulation(SimConfig(reference_topology(), reference_flows(), rows))
