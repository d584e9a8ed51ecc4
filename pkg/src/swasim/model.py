"""Domain types shared by every part of the simulator.

All times are integer nanoseconds (``TimeNs`` is a plain ``int``) and every
computation in the time domain is exact integer arithmetic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

TimeNs = int

# CRC (4) + preamble/SFD (8) + minimum inter-frame gap (12). Frame lengths in
# tables are payload lengths that exclude all three.
WIRE_OVERHEAD_BYTES = 24
# The 12-byte inter-frame gap trails the frame: a receiver has the whole frame
# once preamble/SFD, payload and CRC are in.
RECEPTION_OVERHEAD_BYTES = 12

# Forwarding latency of an uncongested switch, used as the default constant C
# of the self-recovery condition.
DEFAULT_MIN_FORWARDING_TIME = 7920

DEFAULT_SYNC_ACCURACY = 500


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class Rate:
    """Link rate as an exact ``bits`` per ``ns`` ratio (100 Mbps is 1 bit / 10 ns)."""

    bits: int = 1
    ns: int = 10

    def __post_init__(self):
        if self.bits <= 0 or self.ns <= 0:
            raise ConfigError(f"rate must be positive, got {self.bits}/{self.ns}")

    @classmethod
    def from_mbps(cls, mbps: int) -> "Rate":
        # mbps bits per 1000 ns, kept in lowest terms
        if mbps <= 0 or int(mbps) != mbps:
            raise ConfigError(f"rate must be a positive whole number of Mbps, got {mbps}")
        g = math.gcd(int(mbps), 1000)
        return cls(bits=int(mbps) // g, ns=1000 // g)

    @property
    def mbps(self) -> float:
        return self.bits * 1000 / self.ns


FAST_ETHERNET = Rate(1, 10)


def transmission_time(length_bytes: int, rate: Rate = FAST_ETHERNET,
                      overhead: int = WIRE_OVERHEAD_BYTES) -> TimeNs:
    """Time a frame of ``length_bytes`` payload occupies the wire.

    Rounds up when the rate does not divide the bit count evenly.
    """
    if length_bytes <= 0:
        raise ValueError("length_bytes must be positive")
    bits = (length_bytes + overhead) * 8
    return -(-bits * rate.ns // rate.bits)


def reception_time(length_bytes: int, rate: Rate = FAST_ETHERNET) -> TimeNs:
    """First bit in to frame fully received (the store-and-forward delay)."""
    return transmission_time(length_bytes, rate, RECEPTION_OVERHEAD_BYTES)


class WindowAnchoring(str, enum.Enum):
    NOMINAL_START = "nominal-start"
    CENTERED = "centered"


def arrival_window(offset: TimeNs, pdelay: TimeNs, ldelay: TimeNs, mu: TimeNs,
                   anchoring: WindowAnchoring = WindowAnchoring.NOMINAL_START) -> tuple[TimeNs, TimeNs]:
    """Admissible first-bit arrival interval at the next hop for a departure at ``offset``."""
    if min(offset, pdelay, ldelay, mu) < 0:
        raise ValueError("arrival_window inputs must be non-negative")
    nominal = offset + pdelay + ldelay
    if WindowAnchoring(anchoring) is WindowAnchoring.CENTERED:
        return nominal - mu, nominal + mu
    return nominal, nominal + 2 * mu


# ---------------------------------------------------------------------------
# frames and flows


class FrameKind(enum.IntEnum):
    TT = 0
    COPY = 1
    BE = 2


@dataclass(slots=True, eq=False)
class Frame:
    """A TT frame, its clone, or a best-effort disturbance frame in flight.

    ``alive`` is set once a copy has passed a sequence check and cleared when it
    is dropped or delivered; the engine uses it for the copy census.
    """

    flow_id: Optional[int]
    sequence: int
    length_bytes: int
    input_port: int = -1
    arrival_time: TimeNs = 0
    iscopy: bool = False
    src_send_time: TimeNs = 0
    dst: Optional[str] = None
    alive: bool = False

    @property
    def kind(self) -> FrameKind:
        if self.flow_id is None:
            return FrameKind.BE
        return FrameKind.COPY if self.iscopy else FrameKind.TT

    def clone(self) -> "Frame":
        return Frame(self.flow_id, self.sequence, self.length_bytes, self.input_port,
                     self.arrival_time, True, self.src_send_time)


@dataclass(frozen=True)
class FlowSpec:
    flow_id: int
    period: TimeNs
    length_bytes: int
    path: tuple[str, ...]
    e2e_latency_bound: Optional[TimeNs] = None

    def __post_init__(self):
        if self.period <= 0:
            raise ConfigError(f"flow {self.flow_id}: period must be positive")
        if self.length_bytes <= 0:
            raise ConfigError(f"flow {self.flow_id}: length must be positive")
        if len(self.path) < 2:
            raise ConfigError(f"flow {self.flow_id}: path needs at least two vertices")
        if len(set(self.path)) != len(self.path):
            raise ConfigError(f"flow {self.flow_id}: path repeats a vertex")

    @property
    def source(self) -> str:
        return self.path[0]

    @property
    def destination(self) -> str:
        return self.path[-1]

    @property
    def switches(self) -> tuple[str, ...]:
        return self.path[1:-1]

    @property
    def links(self) -> list[tuple[str, str]]:
        return list(zip(self.path, self.path[1:]))


@dataclass(frozen=True)
class LinkSchedule:
    """Departure offset of one flow from one vertex, plus its arrival window there.

    Source end-systems carry no input port and no arrival window.
    """

    flow_id: int
    vertex: str
    output_port: int
    offset: TimeNs
    input_port: Optional[int] = None
    arrival_start: Optional[TimeNs] = None
    arrival_end: Optional[TimeNs] = None

    def __post_init__(self):
        if self.offset < 0:
            raise ConfigError(f"flow {self.flow_id} at {self.vertex}: negative offset")
        if (self.arrival_start is None) != (self.arrival_end is None):
            raise ConfigError(f"flow {self.flow_id} at {self.vertex}: half-specified arrival window")
        if self.arrival_start is not None and self.arrival_start > self.arrival_end:
            raise ConfigError(f"flow {self.flow_id} at {self.vertex}: arrival-start after arrival-end")

    @property
    def is_source(self) -> bool:
        return self.arrival_start is None


# ---------------------------------------------------------------------------
# forwarding tables


@dataclass(slots=True)
class ScheduleRow:
    flow_id: int
    period: TimeNs
    length_bytes: int
    input_port: int
    output_port: int
    arrival_start: TimeNs
    arrival_end: TimeNs
    offset: TimeNs
    sequence: int = 0


class ScheduleTable(dict):
    """flow_id -> ScheduleRow."""

    @classmethod
    def from_rows(cls, rows: Iterable[ScheduleRow]) -> "ScheduleTable":
        table = cls()
        for row in rows:
            if row.flow_id in table:
                raise ConfigError(f"duplicate flow-id {row.flow_id} in schedule table")
            table[row.flow_id] = row
        return table


@dataclass(frozen=True, slots=True)
class RouteRow:
    length_bytes: int
    input_port: int
    output_port: int


class StaticRouteTable(dict):
    """flow_id -> RouteRow."""


class SequenceTable(dict):
    """flow_id -> sequence number of the last copy let through (or restored by a TT frame)."""


class JitterMode(str, enum.Enum):
    UNCONSTRAINED = "unconstrained"
    HOLD = "hold"
    TT_ONLY = "tt-only"


@dataclass(slots=True)
class FilterRow:
    sequence: int = 0
    mode: JitterMode = JitterMode.UNCONSTRAINED
    jitter: TimeNs = 0
    enabled: bool = False

    def configure_jitter(self, value: TimeNs, period: TimeNs) -> None:
        """Out-of-range values select a mode: negative means TT frames only,
        above the period means no constraint."""
        if value < 0:
            self.mode, self.jitter = JitterMode.TT_ONLY, 0
        elif value > period:
            self.mode, self.jitter = JitterMode.UNCONSTRAINED, 0
        else:
            self.mode, self.jitter = JitterMode.HOLD, value


class FilterTable(dict):
    """flow_id -> FilterRow."""


def derive_tables(schedule: ScheduleTable | Iterable[ScheduleRow]
                  ) -> tuple[StaticRouteTable, SequenceTable, FilterTable]:
    """Build the copy-path tables from a switch's schedule table."""
    if not isinstance(schedule, ScheduleTable):
        schedule = ScheduleTable.from_rows(schedule)
    routes, sequences, filters = StaticRouteTable(), SequenceTable(), FilterTable()
    for flow_id, row in schedule.items():
        routes[flow_id] = RouteRow(row.length_bytes, row.input_port, row.output_port)
        sequences[flow_id] = 0
        filters[flow_id] = FilterRow()
    return routes, sequences, filters


# ---------------------------------------------------------------------------
# topology


class VertexKind(str, enum.Enum):
    END_SYSTEM = "end-system"
    SWITCH = "switch"


@dataclass(frozen=True)
class Vertex:
    id: str
    kind: VertexKind
    port_count: int = 24
    pdelay: TimeNs = 200
    min_forwarding_time: TimeNs = DEFAULT_MIN_FORWARDING_TIME

    @property
    def is_switch(self) -> bool:
        return self.kind is VertexKind.SWITCH


@dataclass(frozen=True)
class Link:
    """Directed dataflow link between two ports."""

    src: str
    src_port: int
    dst: str
    dst_port: int
    rate: Rate = FAST_ETHERNET
    link_delay: TimeNs = 200


@dataclass
class Topology:
    vertices: dict[str, Vertex] = field(default_factory=dict)
    links: list[Link] = field(default_factory=list)
    sync_accuracy: TimeNs = DEFAULT_SYNC_ACCURACY
    anchoring: WindowAnchoring = WindowAnchoring.NOMINAL_START

    def __post_init__(self):
        self._by_port: dict[tuple[str, int], Link] = {}
        for link in self.links:
            self._index(link)

    def _index(self, link: Link) -> None:
        for vid, port in ((link.src, link.src_port), (link.dst, link.dst_port)):
            vertex = self.vertices.get(vid)
            if vertex is None:
                raise ConfigError(f"link references unknown vertex '{vid}'")
            if not 0 <= port < vertex.port_count:
                raise ConfigError(f"port {port} out of range for vertex '{vid}'")
        key = (link.src, link.src_port)
        if key in self._by_port:
            raise ConfigError(f"port {link.src}:{link.src_port} drives two links")
        self._by_port[key] = link

    def add_vertex(self, vertex: Vertex) -> None:
        if vertex.id in self.vertices:
            raise ConfigError(f"duplicate vertex '{vertex.id}'")
        self.vertices[vertex.id] = vertex

    def add_link(self, link: Link) -> None:
        self._index(link)
        self.links.append(link)

    def connect(self, a: str, a_port: int, b: str, b_port: int,
                rate: Rate = FAST_ETHERNET, link_delay: TimeNs = 200) -> None:
        """Full-duplex cable: one directed link each way."""
        self.add_link(Link(a, a_port, b, b_port, rate, link_delay))
        self.add_link(Link(b, b_port, a, a_port, rate, link_delay))

    def link_from(self, vertex: str, port: int) -> Optional[Link]:
        return self._by_port.get((vertex, port))

    def link_between(self, u: str, v: str) -> Link:
        found = [l for l in self.links if l.src == u and l.dst == v]
        if len(found) != 1:
            raise ConfigError(f"expected exactly one link {u} -> {v}, found {len(found)}")
        return found[0]

    def out_links(self, vertex: str) -> list[Link]:
        return [l for l in self.links if l.src == vertex]

    def switches(self) -> list[str]:
        return [v.id for v in self.vertices.values() if v.is_switch]

    def check_flow(self, flow: FlowSpec) -> None:
        for vid in (flow.source, flow.destination):
            if vid not in self.vertices:
                raise ConfigError(f"flow {flow.flow_id}: unknown vertex '{vid}'")
            if self.vertices[vid].is_switch:
                raise ConfigError(f"flow {flow.flow_id}: path must start and end at end-systems")
        for vid in flow.switches:
            if vid not in self.vertices:
                raise ConfigError(f"flow {flow.flow_id}: unknown vertex '{vid}'")
            if not self.vertices[vid].is_switch:
                raise ConfigError(f"flow {flow.flow_id}: interior vertex '{vid}' is not a switch")
        for u, v in flow.links:
            self.link_between(u, v)

    def hop_tx_time(self, flow: FlowSpec, hop: int) -> TimeNs:
        """Serialization time of the flow's frame on its ``hop``-th link."""
        u, v = flow.links[hop]
        return transmission_time(flow.length_bytes, self.link_between(u, v).rate)

    def min_copy_hop_time(self, flow: FlowSpec) -> TimeNs:
        """Smallest ready-to-ready time of a copy over one hop that ends at a switch.

        This is the tightest constant C for which the self-recovery condition
        holds in the simulator.
        """
        best = None
        for hop in range(len(flow.links) - 1):
            u, v = flow.links[hop]
            link = self.link_between(u, v)
            t = reception_time(flow.length_bytes, link.rate) + self.vertices[u].pdelay + link.link_delay
            best = t if best is None else min(best, t)
        return best if best is not None else 0
