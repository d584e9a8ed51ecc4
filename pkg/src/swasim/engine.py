"""Deterministic discrete-event simulation of a TT network with copy forwarding.

Timing model
------------
* An egress port is busy for ``[d, d + tx)`` when it starts a frame at ``d``.
* The first bit reaches the receiver at ``d + pdelay(sender) + link_delay``;
  that instant is the frame's ``arrival_time`` there.
* The wire is occupied for the frame plus preamble, CRC and inter-frame gap;
  the receiver has the frame once everything but the trailing gap is in.
* Switches are store-and-forward: the pipeline runs once the frame is in.
* Clocks are perfectly synchronised; the only randomness is the phase of the
  disturbance generator, drawn from a seeded ``random.Random``.

Events that fall on the same instant are ordered TT-timers first, then by
insertion order, so a TT departure always wins a tie against anything else.

Egress ports apply a strict guard band: a non-TT frame starts only when it ends
no later than the next TT slot of the port's gate schedule. At a port where a
flow's arrival filter is active, a copy may use the slot of its own TT frame,
since that frame will be discarded there anyway.
"""

from __future__ import annotations

import heapq
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Optional, Sequence

from .jitter import hyperperiod
from .model import (
    ConfigError, FlowSpec, Frame, JitterMode, LinkSchedule, ScheduleRow, ScheduleTable,
    TimeNs, Topology, reception_time, transmission_time,
)
from .pipeline import Deliver, Drop, DropReason, HoldUntil, SetTimer, SwitchState

DISTURBANCE_FRAME_BYTES = 64


class SimulationFault(RuntimeError):
    """A hard invariant of the simulated network was broken."""

    def __init__(self, message: str, time: TimeNs, vertex: str = "", flow_id: Optional[int] = None):
        self.time, self.vertex, self.flow_id = time, vertex, flow_id
        super().__init__(f"t={time} {vertex} flow={flow_id}: {message}")


@dataclass(frozen=True)
class DisturbanceSpec:
    source: str
    rate_mbps: float
    pattern: str = "broadcast"          # or "unicast"
    destination: Optional[str] = None   # required for unicast
    length_bytes: int = DISTURBANCE_FRAME_BYTES
    priority: int = 1

    def __post_init__(self):
        if self.pattern not in ("broadcast", "unicast"):
            raise ConfigError(f"unknown disturbance pattern '{self.pattern}'", field="pattern")
        if self.pattern == "unicast" and not self.destination:
            raise ConfigError("unicast disturbance needs a destination", field="destination")
        if self.rate_mbps < 0:
            raise ConfigError("disturbance rate must be non-negative", field="rate")


@dataclass(frozen=True)
class FaultSpec:
    """Drop copies of ``flow_id`` at ``switch``'s BE stage (``sequences`` None: all of them)."""

    switch: str
    flow_id: int
    sequences: Optional[frozenset] = None


@dataclass
class ScenarioSpec:
    seed: int = 0
    periods: int = 200                 # measured periods of the shortest-period flow
    warmup_hyperperiods: int = 2
    queue_capacity: int = 16
    priority_levels: int = 2
    copy_priority: int = 0
    copies: bool = True
    disturbance: Optional[DisturbanceSpec] = None
    # flow_id -> jitter value at the flow's filtering switch(es)
    jitter: dict = field(default_factory=dict)
    # explicit (switch, flow_id) filter placements; None filters at each flow's last switch
    filters: Optional[list] = None
    faults: list = field(default_factory=list)
    rewrite_iscopy: bool = False
    # flow_id -> expected safe-jitter upper bound, compared by the jitter analysis
    reference_jitter: dict = field(default_factory=dict)


@dataclass
class SimConfig:
    topology: Topology
    flows: dict                          # flow_id -> FlowSpec
    schedules: list                      # LinkSchedule rows
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    name: str = ""


# ---------------------------------------------------------------------------
# results


@dataclass
class FlowResult:
    flow_id: int
    # sequence -> end-to-end latency of the first delivery, measured sequences only
    latencies: dict = field(default_factory=dict)
    delivered: int = 0
    duplicates: int = 0
    order_violations: int = 0
    copy_wins: int = 0
    max_copies: int = 0
    last_delivered: int = 0

    def stats(self) -> tuple[Optional[int], Optional[float], Optional[int], Optional[int]]:
        """(min, mean, max, max - min) of the measured latencies."""
        if not self.latencies:
            return None, None, None, None
        values = self.latencies.values()
        lo, hi = min(values), max(values)
        return lo, sum(values) / len(self.latencies), hi, hi - lo


@dataclass
class ScenarioResult:
    flows: dict = field(default_factory=dict)            # flow_id -> FlowResult
    # (vertex, flow_id or None for best effort, reason) -> count, measured window only
    drops: Counter = field(default_factory=Counter)
    # (switch, flow_id) -> copies the sequence check dropped for skipping ahead
    gap_drops: Counter = field(default_factory=Counter)
    # (time, switch, flow_id, sequence) of every TT timer expiry
    tt_fires: list = field(default_factory=list)
    be_sent: int = 0
    be_delivered: int = 0
    events: int = 0
    end_time: TimeNs = 0
    trace: Optional[list] = None

    def drops_for(self, flow_id: Optional[int]) -> Counter:
        out = Counter()
        for (_, fid, reason), n in self.drops.items():
            if fid == flow_id:
                out[reason] += n
        return out

    @property
    def max_copies(self) -> int:
        return max((f.max_copies for f in self.flows.values()), default=0)

    def violations(self) -> list[str]:
        """Soft invariants: in-order delivery and at most one live copy per frame."""
        found = []
        for f in self.flows.values():
            if f.order_violations:
                found.append(f"flow {f.flow_id}: {f.order_violations} out-of-order or duplicate deliveries")
            if f.max_copies > 1:
                found.append(f"flow {f.flow_id}: {f.max_copies} copies of one frame alive at once")
        return found


# ---------------------------------------------------------------------------
# disturbance


def disturbance_times(rate_mbps: float, line_rate_mbps: float, tx_time: TimeNs, phase: TimeNs,
                      until: TimeNs) -> Iterator[TimeNs]:
    """Send instants of a constant-rate stream; spacing averages exactly ``tx * line / rate``."""
    if rate_mbps <= 0:
        return
    if rate_mbps > line_rate_mbps:
        raise ValueError(f"disturbance rate {rate_mbps} exceeds line rate {line_rate_mbps}")
    spacing = Fraction(tx_time) * Fraction(line_rate_mbps) / Fraction(rate_mbps)
    k = 0
    while True:
        t = phase + int(k * spacing)
        if t >= until:
            return
        yield t
        k += 1


def generate_disturbance(spec: DisturbanceSpec, topology: Topology, seed: int,
                         until: TimeNs) -> Iterator[tuple[TimeNs, Frame]]:
    """Frames injected by the disturbing end-system, with a seeded random phase."""
    links = topology.out_links(spec.source)
    if len(links) != 1:
        raise ConfigError(f"disturbance source '{spec.source}' must have exactly one link")
    link = links[0]
    tx = transmission_time(spec.length_bytes, link.rate)
    if spec.rate_mbps <= 0:
        return
    spacing = Fraction(tx) * Fraction(link.rate.bits * 1000, link.rate.ns) / Fraction(spec.rate_mbps)
    rng = random.Random(f"{seed}:{spec.source}:{spec.rate_mbps}")
    phase = rng.randrange(max(1, int(spacing)))
    line = Fraction(link.rate.bits * 1000, link.rate.ns)
    dst = spec.destination if spec.pattern == "unicast" else None
    for k, t in enumerate(disturbance_times(spec.rate_mbps, line, tx, phase, until)):
        yield t, Frame(None, k + 1, spec.length_bytes, dst=dst)


# ---------------------------------------------------------------------------
# engine internals

_TIMER, _SRC, _ARRIVE, _TXDONE, _WAKE, _RELEASE, _GEN = range(7)
_NEVER = float("inf")


class _Port:
    __slots__ = ("vertex", "port", "link", "hop_delay", "queues", "release", "capacity", "busy_until",
                 "gate", "switch", "wake_at", "tx_cache", "rx_cache")

    def __init__(self, vertex, link, hop_delay, levels, capacity, switch):
        self.vertex = vertex
        self.port = link.src_port
        self.link = link
        self.hop_delay = hop_delay
        self.queues = [deque() for _ in range(levels)]
        self.release = deque()
        self.capacity = capacity
        self.busy_until = 0
        self.gate = []          # (flow_id, offset, period)
        self.switch = switch
        self.wake_at = None
        self.tx_cache = {}
        self.rx_cache = {}

    def tx(self, length):
        t = self.tx_cache.get(length)
        if t is None:
            t = self.tx_cache[length] = transmission_time(length, self.link.rate)
        return t

    def rx(self, length):
        t = self.rx_cache.get(length)
        if t is None:
            t = self.rx_cache[length] = reception_time(length, self.link.rate)
        return t

    def next_slot(self, now, exempt_flow=None, exempt_index=-1):
        """Start of the earliest TT slot strictly after ``now``.

        Slots at ``now`` itself have already been served, since timers run
        before everything else at an instant.
        """
        best = _NEVER
        for fid, off, per in self.gate:
            k = 0 if now < off else (now - off) // per + 1
            if fid == exempt_flow and k == exempt_index:
                k += 1
            d = off + k * per
            if d < best:
                best = d
        return best

    def has_queued(self):
        if self.release:
            return True
        for q in self.queues:
            if q:
                return True
        return False


class Simulation:
    """One run of one configuration; build, optionally inject faults, then :meth:`run`."""

    def __init__(self, config: SimConfig, trace: bool = False):
        self.config = config
        self.topology = topology = config.topology
        self.scenario = sc = config.scenario
        self.flows: dict[int, FlowSpec] = dict(config.flows)
        self._trace_on = trace
        self._started = False
        if not 0 <= sc.copy_priority < sc.priority_levels:
            raise ConfigError("copy priority outside the configured priority levels", field="copy-priority")
        if sc.disturbance and not 0 <= sc.disturbance.priority < sc.priority_levels:
            raise ConfigError("disturbance priority outside the configured priority levels", field="priority")
        for f in self.flows.values():
            topology.check_flow(f)

        self.switches: dict[str, SwitchState] = {}
        rows: dict[str, list] = {}
        sources: dict[int, LinkSchedule] = {}
        for s in config.schedules:
            flow = self.flows.get(s.flow_id)
            if flow is None:
                raise ConfigError(f"schedule refers to unknown flow {s.flow_id}")
            if s.is_source:
                if s.vertex != flow.source:
                    raise ConfigError(f"flow {s.flow_id}: source schedule at {s.vertex}, not {flow.source}")
                sources[s.flow_id] = s
                continue
            rows.setdefault(s.vertex, []).append(ScheduleRow(
                s.flow_id, flow.period, flow.length_bytes, s.input_port, s.output_port,
                s.arrival_start, s.arrival_end, s.offset))
        for f in self.flows.values():
            if f.flow_id not in sources:
                raise ConfigError(f"flow {f.flow_id} has no source schedule")
        self.sources = sources
        for vid in topology.switches():
            self.switches[vid] = SwitchState(vid, ScheduleTable.from_rows(rows.pop(vid, [])),
                                             cloning=sc.copies, rewrite_iscopy=sc.rewrite_iscopy)
        if rows:
            raise ConfigError(f"schedules at non-switch vertices: {sorted(rows)}")

        placements = sc.filters if sc.filters is not None else [
            (f.switches[-1], f.flow_id) for f in self.flows.values() if f.switches]
        for sw, fid in placements:
            state = self.switches.get(sw)
            if state is None or fid not in state.filters:
                raise ConfigError(f"filter for flow {fid} at {sw}: flow is not scheduled there")
            row = state.filters[fid]
            row.enabled = True
            if fid in sc.jitter:
                row.configure_jitter(sc.jitter[fid], self.flows[fid].period)
        for fault in sc.faults:
            self.inject_fault(fault.switch, fault.flow_id, fault.sequences)

        self.ports: dict[tuple[str, int], _Port] = {}
        for link in topology.links:
            vertex = topology.vertices[link.src]
            self.ports[(link.src, link.src_port)] = _Port(
                link.src, link, vertex.pdelay + link.link_delay, sc.priority_levels,
                sc.queue_capacity, self.switches.get(link.src))
        for s in config.schedules:
            port = self.ports.get((s.vertex, s.output_port))
            if port is None:
                raise ConfigError(f"flow {s.flow_id}: {s.vertex}:{s.output_port} has no link")
            port.gate.append((s.flow_id, s.offset, self.flows[s.flow_id].period))
        self._be_routes = self._unicast_routes()

        periods = [f.period for f in self.flows.values()]
        self.hyperperiod = hyperperiod(periods) if periods else 0
        self.warmup_end = sc.warmup_hyperperiods * self.hyperperiod
        self.send_limit = self.warmup_end + sc.periods * (min(periods) if periods else 0)

    def inject_fault(self, switch: str, flow_id: int, sequences: Optional[Sequence[int]] = None) -> None:
        """Drop copies of a flow at a switch's BE stage (all of them when ``sequences`` is None)."""
        if self._started:
            raise RuntimeError("faults must be injected before the run starts")
        state = self.switches.get(switch)
        if state is None:
            raise ConfigError(f"fault at unknown switch '{switch}'")
        if flow_id not in state.routes:
            raise ConfigError(f"fault for flow {flow_id}, which does not cross {switch}")
        if sequences is None:
            state.faults[flow_id] = None
        else:
            existing = state.faults.get(flow_id, set())
            if existing is not None:
                state.faults[flow_id] = set(existing) | set(sequences)

    def _unicast_routes(self) -> dict:
        """(switch, destination) -> output port along a shortest path."""
        routes = {}
        topo = self.topology
        for dst in topo.vertices:
            # breadth-first search backwards from the destination
            frontier, seen = [dst], {dst}
            while frontier:
                nxt = []
                for v in frontier:
                    for link in topo.links:
                        if link.dst == v and link.src not in seen:
                            seen.add(link.src)
                            routes[(link.src, dst)] = link.src_port
                            nxt.append(link.src)
                frontier = nxt
        return routes

    # -- run -----------------------------------------------------------------

    def run(self) -> ScenarioResult:
        if self._started:
            raise RuntimeError("a Simulation runs once")
        self._started = True
        sc = self.scenario
        res = self.result = ScenarioResult(trace=[] if self._trace_on else None)
        for fid in sorted(self.flows):
            res.flows[fid] = FlowResult(fid)
        self._alive = Counter()
        heap = self._heap = []
        self._seq = 0
        push = self._push

        for fid, src in sorted(self.sources.items()):
            push(src.offset, 0, _SRC, fid, 0)
        if sc.disturbance is not None and sc.disturbance.rate_mbps > 0:
            gen = generate_disturbance(sc.disturbance, self.topology, sc.seed, self.send_limit)
            first = next(gen, None)
            if first is not None:
                push(first[0], 1, _GEN, gen, first[1])

        pop = heapq.heappop
        handlers = {
            _TIMER: self._on_timer, _SRC: self._on_source, _ARRIVE: self._on_arrive,
            _TXDONE: self._on_wakeup, _WAKE: self._on_wake, _RELEASE: self._on_release,
            _GEN: self._on_generate,
        }
        events = 0
        now = 0
        while heap:
            now, _, _, kind, a, b = pop(heap)
            handlers[kind](now, a, b)
            events += 1
        res.events = events
        res.end_time = now
        return res

    def _push(self, time, phase, kind, a, b):
        self._seq += 1
        heapq.heappush(self._heap, (time, phase, self._seq, kind, a, b))

    def _trace(self, now, vertex, what, frame, detail=""):
        if self.result.trace is not None:
            kind = "BE" if frame.flow_id is None else ("COPY" if frame.iscopy else "TT")
            self.result.trace.append((now, vertex, what, frame.flow_id, frame.sequence, kind, detail))

    def _drop(self, now, vertex, frame, reason, gap=False):
        if frame.alive:
            frame.alive = False
            self._alive[(frame.flow_id, frame.sequence)] -= 1
        if now >= self.warmup_end:
            self.result.drops[(vertex, frame.flow_id, reason.value)] += 1
        if gap:
            self.result.gap_drops[(vertex, frame.flow_id)] += 1
        self._trace(now, vertex, "drop", frame, reason.value)

    def _mark_alive(self, frame):
        if not frame.alive:
            frame.alive = True
            key = (frame.flow_id, frame.sequence)
            self._alive[key] += 1
            fr = self.result.flows[frame.flow_id]
            if self._alive[key] > fr.max_copies:
                fr.max_copies = self._alive[key]

    def _transmit(self, now, port, frame):
        tx = port.tx(frame.length_bytes)
        port.busy_until = now + tx
        link = port.link
        frame.input_port = link.dst_port
        frame.arrival_time = now + port.hop_delay
        self._push(now + tx, 1, _TXDONE, port, None)
        self._push(frame.arrival_time + port.rx(frame.length_bytes), 1, _ARRIVE, link.dst, frame)
        self._trace(now, port.vertex, "depart", frame, f"port {port.port}")

    # -- handlers ------------------------------------------------------------

    def _on_source(self, now, fid, k):
        flow = self.flows[fid]
        port = self.ports[(flow.source, self.sources[fid].output_port)]
        if port.busy_until > now:
            raise SimulationFault("source port busy at scheduled departure", now, flow.source, fid)
        frame = Frame(fid, k + 1, flow.length_bytes, src_send_time=now)
        self._transmit(now, port, frame)
        nxt = now + flow.period
        if nxt < self.send_limit:
            self._push(nxt, 0, _SRC, fid, k + 1)

    def _on_generate(self, now, gen, frame):
        self.result.be_sent += 1
        self._enqueue(now, self.ports[(self.scenario.disturbance.source,
                                       self.topology.out_links(self.scenario.disturbance.source)[0].src_port)],
                      frame, self.scenario.disturbance.priority)
        nxt = next(gen, None)
        if nxt is not None:
            self._push(nxt[0], 1, _GEN, gen, nxt[1])

    def _enqueue(self, now, port, frame, priority):
        q = port.queues[priority]
        if len(q) >= port.capacity:
            self._drop(now, port.vertex, frame, DropReason.QUEUE_OVERFLOW)
            return
        q.append(frame)
        self._try_send(now, port)

    def _on_arrive(self, now, vertex, frame):
        state = self.switches.get(vertex)
        if state is None:
            self._deliver_to_end_system(now, vertex, frame)
            return
        if frame.flow_id is None:
            self._forward_best_effort(now, vertex, frame)
            return
        for act in state.ingress(frame):
            if isinstance(act, SetTimer):
                if act.fire_time < now:
                    raise SimulationFault(f"departure {act.fire_time} precedes reception", now, vertex, act.flow_id)
                self._push(act.fire_time, 0, _TIMER, state, act)
            elif isinstance(act, Drop):
                self._drop(now, vertex, act.frame, act.reason)
            else:
                self._enqueue(now, self.ports[(vertex, act.port)], act.frame, self.scenario.copy_priority)

    def _forward_best_effort(self, now, vertex, frame):
        prio = self.scenario.disturbance.priority if self.scenario.disturbance else 0
        if frame.dst is not None:
            out = self._be_routes.get((vertex, frame.dst))
            if out is not None:
                self._enqueue(now, self.ports[(vertex, out)], frame, prio)
            return
        # transmitting the first replica rewrites the frame's ingress fields, so read them once
        ingress, arrived = frame.input_port, frame.arrival_time
        outs = [link.src_port for link in self.topology.out_links(vertex) if link.src_port != ingress]
        for i, port in enumerate(outs):
            f = frame if i == 0 else Frame(None, frame.sequence, frame.length_bytes, ingress, arrived)
            self._enqueue(now, self.ports[(vertex, port)], f, prio)

    def _deliver_to_end_system(self, now, vertex, frame):
        if frame.flow_id is None:
            self.result.be_delivered += 1
            return
        if frame.alive:
            frame.alive = False
            self._alive[(frame.flow_id, frame.sequence)] -= 1
        flow = self.flows[frame.flow_id]
        if vertex != flow.destination:
            raise SimulationFault("frame delivered to the wrong end-system", now, vertex, frame.flow_id)
        fr = self.result.flows[frame.flow_id]
        seq = frame.sequence
        self._trace(now, vertex, "deliver", frame)
        if seq <= fr.last_delivered:
            fr.order_violations += 1
            if seq == fr.last_delivered or seq in fr.latencies:
                fr.duplicates += 1
            return
        fr.last_delivered = seq
        if self.warmup_end <= frame.src_send_time < self.send_limit:
            fr.latencies[seq] = frame.arrival_time - frame.src_send_time
            fr.delivered += 1
            if frame.iscopy:
                fr.copy_wins += 1

    def _on_timer(self, now, state, timer):
        act = state.fire(timer)
        frame = act.frame
        fid = frame.flow_id
        self.result.tt_fires.append((now, state.switch_id, fid, frame.sequence))
        port = self.ports[(state.switch_id, act.port)]
        self._purge_stale(now, state, port, fid)
        if state.filter_enabled(fid):
            verdict = state.filter(frame, now)
            if isinstance(verdict, Drop):
                self._drop(now, state.switch_id, frame, verdict.reason)
                return
        if port.busy_until > now:
            raise SimulationFault("TT departure blocked by a frame in transmission", now, state.switch_id, fid)
        self._transmit(now, port, frame)

    def _purge_stale(self, now, state, port, fid):
        current = state.sequences[fid]
        for q in port.queues:
            if not q:
                continue
            stale = [f for f in q if f.flow_id == fid and f.sequence <= current]
            if stale:
                keep = [f for f in q if not (f.flow_id == fid and f.sequence <= current)]
                q.clear()
                q.extend(keep)
                for f in stale:
                    self._drop(now, state.switch_id, f, DropReason.SEQUENCE_STALE)

    def _on_wakeup(self, now, port, _):
        self._try_send(now, port)

    def _on_wake(self, now, port, _):
        if port.wake_at == now:
            port.wake_at = None
        self._try_send(now, port)

    def _on_release(self, now, port, frame):
        port.release.append(frame)
        self._trace(now, port.vertex, "release", frame)
        self._try_send(now, port)

    def _exemption(self, port, frame):
        """Own-slot exemption for a copy at a port where its flow is filtered."""
        state = port.switch
        if state is None or frame.flow_id is None or not frame.iscopy:
            return None, -1
        row = state.filters.get(frame.flow_id)
        if row is None or not row.enabled or row.mode is JitterMode.TT_ONLY or row.sequence >= frame.sequence:
            return None, -1
        if state.routes[frame.flow_id].output_port != port.port:
            return None, -1
        return frame.flow_id, frame.sequence - 1

    def _try_send(self, now, port):
        while port.busy_until <= now:
            chosen = None
            queues = (port.release, *port.queues)
            for q in queues:
                if not q:
                    continue
                head = q[0]
                ef, ei = self._exemption(port, head)
                if now + port.tx(head.length_bytes) <= port.next_slot(now, ef, ei):
                    chosen = q
                    break
            if chosen is None:
                if port.has_queued():
                    wake = port.next_slot(now)
                    if wake != _NEVER and port.wake_at != wake:
                        port.wake_at = wake
                        self._push(wake, 1, _WAKE, port, None)
                return
            frame = chosen.popleft()
            if frame.flow_id is None:
                self._transmit(now, port, frame)
                return
            state = port.switch
            if state is None:
                self._transmit(now, port, frame)
                return
            if chosen is not port.release:
                drop = state.check_copy(frame)
                if drop is not None:
                    self._drop(now, port.vertex, frame, drop.reason, drop.gap)
                    continue
                self._mark_alive(frame)
            if state.filter_enabled(frame.flow_id):
                verdict = state.filter(frame, now)
                if isinstance(verdict, HoldUntil):
                    self._trace(now, port.vertex, "hold", frame, str(verdict.time))
                    self._push(verdict.time, 1, _RELEASE, port, frame)
                    continue
                if isinstance(verdict, Drop):
                    self._drop(now, port.vertex, frame, verdict.reason)
                    continue
                assert isinstance(verdict, Deliver)
            self._transmit(now, port, frame)
            return


def run(config: SimConfig, trace: bool = False) -> ScenarioResult:
    return Simulation(config, trace=trace).run()
