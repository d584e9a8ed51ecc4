"""The reference testbed: three TT switches in a line between tester ports.

::

    IXIA-0 --4[TTS-1]7-- 0[TTS-2]1 -- 0[TTS-3]2 -- IXIA-3
    IXIA-1 --5[TTS-1]       [TTS-2]2 -- IXIA-2

IXIA-0 sources the three TT flows and IXIA-3 sinks them; IXIA-1 injects the
best-effort disturbance and IXIA-2 is the unicast disturbance sink.
"""

from __future__ import annotations

from .model import FlowSpec, LinkSchedule, Topology, Vertex, VertexKind

TT_PATH = ("IXIA-0", "TTS-1", "TTS-2", "TTS-3", "IXIA-3")
DISTURBER = "IXIA-1"
BE_SINK = "IXIA-2"

# (flow_id, period ns, length bytes)
REFERENCE_FLOWS = ((1, 524288, 128), (2, 1048576, 256), (3, 2097152, 512))

# (switch, flow_id, input port, output port, arrival start, arrival end, offset)
REFERENCE_SCHEDULE = (
    ("TTS-1", 1, 4, 7, 400, 1400, 22528),
    ("TTS-1", 2, 4, 7, 29072, 30072, 61440),
    ("TTS-1", 3, 4, 7, 67984, 68984, 120832),
    ("TTS-2", 1, 0, 1, 22928, 23928, 45056),
    ("TTS-2", 2, 0, 1, 61840, 62840, 94208),
    ("TTS-2", 3, 0, 1, 121232, 122232, 174080),
    ("TTS-3", 1, 0, 2, 45456, 46456, 67584),
    ("TTS-3", 2, 0, 2, 94608, 95608, 126976),
    ("TTS-3", 3, 0, 2, 174480, 175480, 227328),
)
# departure offsets at IXIA-0; each first switch window starts 400 ns later
REFERENCE_SOURCE_OFFSETS = {1: 0, 2: 28672, 3: 67584}
SOURCE_PORT = 0


def reference_topology(pdelay: int = 200, link_delay: int = 200, sync_accuracy: int = 500) -> Topology:
    topo = Topology(sync_accuracy=sync_accuracy)
    for name in ("TTS-1", "TTS-2", "TTS-3"):
        topo.add_vertex(Vertex(name, VertexKind.SWITCH, pdelay=pdelay))
    for name in ("IXIA-0", "IXIA-1", "IXIA-2", "IXIA-3"):
        topo.add_vertex(Vertex(name, VertexKind.END_SYSTEM, port_count=1, pdelay=pdelay))
    topo.connect("IXIA-0", 0, "TTS-1", 4, link_delay=link_delay)
    topo.connect("IXIA-1", 0, "TTS-1", 5, link_delay=link_delay)
    topo.connect("TTS-1", 7, "TTS-2", 0, link_delay=link_delay)
    topo.connect("TTS-2", 1, "TTS-3", 0, link_delay=link_delay)
    topo.connect("TTS-2", 2, "IXIA-2", 0, link_delay=link_delay)
    topo.connect("TTS-3", 2, "IXIA-3", 0, link_delay=link_delay)
    return topo


def reference_flows() -> dict[int, FlowSpec]:
    return {fid: FlowSpec(fid, period, length, TT_PATH) for fid, period, length in REFERENCE_FLOWS}


def reference_schedules() -> list[LinkSchedule]:
    rows = [LinkSchedule(fid, "IXIA-0", SOURCE_PORT, off) for fid, off in REFERENCE_SOURCE_OFFSETS.items()]
    for sw, fid, inp, out, start, end, off in REFERENCE_SCHEDULE:
        rows.append(LinkSchedule(fid, sw, out, off, inp, start, end))
    return rows
