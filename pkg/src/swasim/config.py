"""Line-oriented configuration files.

A file is a sequence of ``[section]`` blocks. Inside a section, ``key = value``
lines set scalar options and ``record key=value key=value ...`` lines declare
vertices, links, flows, schedule rows and scenario details. ``#`` starts a
comment. Example::

    [topology]
    sync-accuracy = 500
    vertex id=TTS-1 kind=switch ports=24 pdelay=200
    vertex id=IXIA-0 kind=end-system ports=1 pdelay=200
    link a=IXIA-0:0 b=TTS-1:4 rate-mbps=100 ldelay=200

    [flows]
    flow flow-id=1 period=524288 length=128 path=IXIA-0,TTS-1,IXIA-3

    [schedules]
    schedule switch=IXIA-0 flow-id=1 output-port=0 offset=0
    schedule switch=TTS-1 flow-id=1 input-port=4 output-port=7 arrival-start=400 arrival-end=1400 offset=22528

Links are full duplex unless ``duplex=no``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .engine import DisturbanceSpec, FaultSpec, ScenarioSpec, SimConfig
from .model import (
    DEFAULT_MIN_FORWARDING_TIME, ConfigError, FlowSpec, Link, LinkSchedule, Rate, Topology, Vertex,
    VertexKind, WindowAnchoring,
)
from .scheduler import DEFAULT_GRANULARITY

SECTIONS = ("topology", "flows", "schedules", "scenario", "scheduler")


@dataclass
class SchedulerSettings:
    hop_slack: int = 0
    granularity: int = DEFAULT_GRANULARITY
    enforce_recovery: bool = True
    # self-recovery constant; None uses each flow's tightest copy hop time
    c: Optional[int] = None


@dataclass
class ConfigDocument:
    topology: Topology
    flows: dict = field(default_factory=dict)
    schedules: list = field(default_factory=list)
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    scheduler: SchedulerSettings = field(default_factory=SchedulerSettings)
    # duplex cables as written, so the writer can reproduce them
    cables: list = field(default_factory=list)

    def sim_config(self, name: str = "") -> SimConfig:
        return SimConfig(self.topology, dict(self.flows), list(self.schedules), self.scenario, name)


# ---------------------------------------------------------------------------
# parsing helpers


def _int(value: str, line: int, key: str) -> int:
    try:
        return int(value, 10)
    except ValueError:
        raise ConfigError(f"expected an integer, got '{value}'", line, key) from None


def _number(value: str, line: int, key: str) -> float:
    try:
        n = float(value)
    except ValueError:
        raise ConfigError(f"expected a number, got '{value}'", line, key) from None
    return int(n) if n.is_integer() else n


def _bool(value: str, line: int, key: str) -> bool:
    v = value.lower()
    if v in ("yes", "true", "on", "1"):
        return True
    if v in ("no", "false", "off", "0"):
        return False
    raise ConfigError(f"expected yes/no, got '{value}'", line, key)


def _endpoint(value: str, line: int, key: str) -> tuple[str, int]:
    vertex, sep, port = value.rpartition(":")
    if not sep or not vertex:
        raise ConfigError(f"expected vertex:port, got '{value}'", line, key)
    return vertex, _int(port, line, key)


class _Record:
    """``key=value`` fields of one record line, consumed as they are read."""

    def __init__(self, kind: str, tokens: list[str], line: int):
        self.kind, self.line = kind, line
        self.fields: dict[str, str] = {}
        for tok in tokens:
            key, sep, value = tok.partition("=")
            if not sep or not key:
                raise ConfigError(f"expected key=value, got '{tok}'", line)
            if key in self.fields:
                raise ConfigError("field given twice", line, key)
            self.fields[key] = value

    def take(self, key: str, conv: Callable = str, default=...):
        if key not in self.fields:
            if default is ...:
                raise ConfigError(f"{self.kind} record is missing a field", self.line, key)
            return default
        raw = self.fields.pop(key)
        if conv is str:
            return raw
        return conv(raw, self.line, key)

    def done(self) -> None:
        if self.fields:
            key = sorted(self.fields)[0]
            raise ConfigError(f"unknown field for {self.kind}", self.line, key)


def _wrap(line: int, key: Optional[str], fn, *args):
    """Attach a line number to errors raised while building domain objects."""
    try:
        return fn(*args)
    except ConfigError as exc:
        if exc.line is not None:
            raise
        raise ConfigError(str(exc), line, exc.field or key) from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), line, key) from None


# ---------------------------------------------------------------------------
# parser


def parse_config(text: str) -> ConfigDocument:
    topo = Topology()
    doc = ConfigDocument(topology=topo)
    sc = doc.scenario
    section = None
    seen_sections = set()
    cables_pending = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header '{line}'", lineno)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section '{section}'", lineno)
            if section in seen_sections:
                raise ConfigError(f"section '{section}' appears twice", lineno)
            seen_sections.add(section)
            continue
        if section is None:
            raise ConfigError("content before the first section", lineno)

        head, _, rest = line.partition(" ")
        if "=" in head or rest.lstrip().startswith("="):
            key, _, value = line.partition("=")
            _setting(doc, section, key.strip(), value.strip(), lineno)
            continue
        rec = _Record(head, rest.split(), lineno)
        _record(doc, section, rec, cables_pending)
        rec.done()

    for rec_line, link_args, duplex in cables_pending:
        a, a_port, b, b_port, rate, ldelay = link_args
        if duplex:
            _wrap(rec_line, "a", topo.connect, a, a_port, b, b_port, rate, ldelay)
        else:
            _wrap(rec_line, "a", topo.add_link, Link(a, a_port, b, b_port, rate, ldelay))
        doc.cables.append((a, a_port, b, b_port, rate, ldelay, duplex))
    for fid, flow in doc.flows.items():
        _wrap(None, "path", topo.check_flow, flow)
    return doc


def _setting(doc: ConfigDocument, section: str, key: str, value: str, line: int) -> None:
    sc, topo, sched = doc.scenario, doc.topology, doc.scheduler
    if section == "topology":
        if key == "sync-accuracy":
            topo.sync_accuracy = _int(value, line, key)
        elif key == "anchoring":
            topo.anchoring = _wrap(line, key, WindowAnchoring, value)
        else:
            raise ConfigError("unknown setting", line, key)
    elif section == "scenario":
        ints = {"seed": "seed", "periods": "periods", "warmup-hyperperiods": "warmup_hyperperiods",
                "queue-capacity": "queue_capacity", "priority-levels": "priority_levels",
                "copy-priority": "copy_priority"}
        bools = {"copies": "copies", "rewrite-iscopy": "rewrite_iscopy"}
        if key in ints:
            v = _int(value, line, key)
            if v < 0 or (key in ("periods", "queue-capacity", "priority-levels") and v == 0):
                raise ConfigError("value out of range", line, key)
            setattr(sc, ints[key], v)
        elif key in bools:
            setattr(sc, bools[key], _bool(value, line, key))
        else:
            raise ConfigError("unknown setting", line, key)
    elif section == "scheduler":
        if key == "hop-slack":
            sched.hop_slack = _int(value, line, key)
        elif key == "granularity":
            sched.granularity = _int(value, line, key)
            if sched.granularity <= 0:
                raise ConfigError("granularity must be positive", line, key)
        elif key == "enforce-recovery":
            sched.enforce_recovery = _bool(value, line, key)
        elif key == "recovery-constant":
            sched.c = _int(value, line, key)
        else:
            raise ConfigError("unknown setting", line, key)
    else:
        raise ConfigError(f"section [{section}] takes no settings", line, key)


def _record(doc: ConfigDocument, section: str, rec: _Record, cables_pending: list) -> None:
    kinds = {"topology": ("vertex", "link"), "flows": ("flow",), "schedules": ("schedule",),
             "scenario": ("disturbance", "jitter", "filter", "fault", "reference-jitter"),
             "scheduler": ()}
    if rec.kind not in kinds[section]:
        raise ConfigError(f"unexpected record '{rec.kind}' in [{section}]", rec.line)
    line = rec.line
    topo, sc = doc.topology, doc.scenario

    if rec.kind == "vertex":
        vid = rec.take("id")
        kind = rec.take("kind")
        vkind = _wrap(line, "kind", VertexKind, kind)
        default_ports = 24 if vkind is VertexKind.SWITCH else 1
        vertex = _wrap(line, "id", Vertex, vid, vkind, rec.take("ports", _int, default_ports),
                       rec.take("pdelay", _int, 200),
                       rec.take("forwarding-time", _int, DEFAULT_MIN_FORWARDING_TIME))
        _wrap(line, "id", topo.add_vertex, vertex)
    elif rec.kind == "link":
        a, a_port = rec.take("a", _endpoint)
        b, b_port = rec.take("b", _endpoint)
        rate = _wrap(line, "rate-mbps", Rate.from_mbps, rec.take("rate-mbps", _int, 100))
        ldelay = rec.take("ldelay", _int, 200)
        duplex = rec.take("duplex", _bool, True)
        cables_pending.append((line, (a, a_port, b, b_port, rate, ldelay), duplex))
    elif rec.kind == "flow":
        fid = rec.take("flow-id", _int)
        if fid in doc.flows:
            raise ConfigError(f"duplicate flow {fid}", line, "flow-id")
        path = tuple(p for p in rec.take("path").split(",") if p)
        bound = rec.take("latency-bound", _int, None)
        doc.flows[fid] = _wrap(line, "flow-id", FlowSpec, fid, rec.take("period", _int),
                               rec.take("length", _int), path, bound)
    elif rec.kind == "schedule":
        row = _wrap(line, "flow-id", LinkSchedule,
                    rec.take("flow-id", _int), rec.take("switch"), rec.take("output-port", _int),
                    rec.take("offset", _int), rec.take("input-port", _int, None),
                    rec.take("arrival-start", _int, None), rec.take("arrival-end", _int, None))
        if row.flow_id not in doc.flows:
            raise ConfigError(f"schedule for undeclared flow {row.flow_id}", line, "flow-id")
        doc.schedules.append(row)
    elif rec.kind == "disturbance":
        if sc.disturbance is not None:
            raise ConfigError("only one disturbance source is supported", line)
        sc.disturbance = _wrap(line, None, DisturbanceSpec, rec.take("source"),
                               rec.take("rate-mbps", _number, 0), rec.take("pattern", str, "broadcast"),
                               rec.take("destination", str, None), rec.take("length", _int, 64),
                               rec.take("priority", _int, 1))
    elif rec.kind == "jitter":
        fid = rec.take("flow-id", _int)
        sc.jitter[fid] = rec.take("value", _int)
    elif rec.kind == "filter":
        if sc.filters is None:
            sc.filters = []
        sc.filters.append((rec.take("switch"), rec.take("flow-id", _int)))
    elif rec.kind == "fault":
        seqs = rec.take("sequences", str, "all")
        if seqs == "all":
            chosen = None
        else:
            chosen = frozenset(_int(s, line, "sequences") for s in seqs.split(",") if s)
        sc.faults.append(FaultSpec(rec.take("switch"), rec.take("flow-id", _int), chosen))
    elif rec.kind == "reference-jitter":
        sc.reference_jitter[rec.take("flow-id", _int)] = rec.take("upper", _int)


def load_config(path: str | Path) -> ConfigDocument:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# writer


def _rate_mbps(rate: Rate) -> int:
    mbps = rate.bits * 1000 / rate.ns
    if not float(mbps).is_integer():
        raise ConfigError(f"rate {rate} is not a whole number of Mbps")
    return int(mbps)


def format_config(doc: ConfigDocument) -> str:
    """Serialise a document; parsing the output gives back an equivalent document."""
    topo, sc, sched = doc.topology, doc.scenario, doc.scheduler
    out = ["[topology]", f"sync-accuracy = {topo.sync_accuracy}",
           f"anchoring = {WindowAnchoring(topo.anchoring).value}"]
    for v in topo.vertices.values():
        out.append(f"vertex id={v.id} kind={v.kind.value} ports={v.port_count} pdelay={v.pdelay} "
                   f"forwarding-time={v.min_forwarding_time}")
    cables = doc.cables or [(l.src, l.src_port, l.dst, l.dst_port, l.rate, l.link_delay, False)
                            for l in topo.links]
    for a, ap, b, bp, rate, ldelay, duplex in cables:
        out.append(f"link a={a}:{ap} b={b}:{bp} rate-mbps={_rate_mbps(rate)} ldelay={ldelay} "
                   f"duplex={'yes' if duplex else 'no'}")

    out += ["", "[flows]"]
    for fid in sorted(doc.flows):
        f = doc.flows[fid]
        extra = f" latency-bound={f.e2e_latency_bound}" if f.e2e_latency_bound is not None else ""
        out.append(f"flow flow-id={fid} period={f.period} length={f.length_bytes} path={','.join(f.path)}{extra}")

    if doc.schedules:
        out += ["", "[schedules]"]
        for s in doc.schedules:
            parts = [f"schedule switch={s.vertex} flow-id={s.flow_id}"]
            if not s.is_source:
                parts.append(f"input-port={s.input_port}")
            parts.append(f"output-port={s.output_port}")
            if not s.is_source:
                parts.append(f"arrival-start={s.arrival_start} arrival-end={s.arrival_end}")
            parts.append(f"offset={s.offset}")
            out.append(" ".join(parts))

    out += ["", "[scenario]", f"seed = {sc.seed}", f"periods = {sc.periods}",
            f"warmup-hyperperiods = {sc.warmup_hyperperiods}", f"queue-capacity = {sc.queue_capacity}",
            f"priority-levels = {sc.priority_levels}", f"copy-priority = {sc.copy_priority}",
            f"copies = {'yes' if sc.copies else 'no'}",
            f"rewrite-iscopy = {'yes' if sc.rewrite_iscopy else 'no'}"]
    d = sc.disturbance
    if d is not None:
        dest = f" destination={d.destination}" if d.destination else ""
        out.append(f"disturbance source={d.source} pattern={d.pattern} rate-mbps={d.rate_mbps} "
                   f"length={d.length_bytes} priority={d.priority}{dest}")
    for fid in sorted(sc.jitter):
        out.append(f"jitter flow-id={fid} value={sc.jitter[fid]}")
    for sw, fid in sc.filters or []:
        out.append(f"filter switch={sw} flow-id={fid}")
    for fault in sc.faults:
        seqs = "all" if fault.sequences is None else ",".join(str(s) for s in sorted(fault.sequences))
        out.append(f"fault switch={fault.switch} flow-id={fault.flow_id} sequences={seqs}")
    for fid in sorted(sc.reference_jitter):
        out.append(f"reference-jitter flow-id={fid} upper={sc.reference_jitter[fid]}")

    out += ["", "[scheduler]", f"hop-slack = {sched.hop_slack}", f"granularity = {sched.granularity}",
            f"enforce-recovery = {'yes' if sched.enforce_recovery else 'no'}"]
    if sched.c is not None:
        out.append(f"recovery-constant = {sched.c}")
    return "\n".join(out) + "\n"
