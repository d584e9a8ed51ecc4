"""Scenario presets, rate sweeps and CSV reporting.

Every rate step runs two arms on the same disturbance stream: ``pre`` with
copies disabled (plain TT forwarding) and ``swa`` with copies enabled.
"""

from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .engine import DisturbanceSpec, ScenarioResult, SimConfig, Simulation
from .model import ConfigError
from .pipeline import DropReason

PRESETS = ("one", "two", "three", "four")
PRESET_JITTER = 10_000

ARMS = ("pre", "swa")

CSV_COLUMNS = (
    ["flow_id", "rate_mbps", "lat_min_ns", "lat_avg_ns", "lat_max_ns", "jitter_ns", "delivered"]
    + [f"dropped_{r.value}" for r in DropReason]
    + ["order_violations", "max_copies"]
)


@dataclass(frozen=True)
class PresetDefaults:
    """Where the disturbance enters and leaves; taken from the config when it has one."""

    source: str = "IXIA-1"
    unicast_destination: str = "IXIA-2"


def apply_preset(config: SimConfig, preset: str, rate_mbps: float) -> SimConfig:
    """Pure expansion of a preset at one rate step into a full configuration."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset '{preset}'", field="preset")
    base = config.scenario
    defaults = PresetDefaults()
    src = base.disturbance.source if base.disturbance else defaults.source
    dst = (base.disturbance.destination if base.disturbance and base.disturbance.destination
           else defaults.unicast_destination)
    levels = max(base.priority_levels, 2)
    if preset == "one":
        copy_prio, dist_prio = 0, 1
    else:
        copy_prio = dist_prio = 1
    pattern = "unicast" if preset == "three" else "broadcast"
    disturbance = DisturbanceSpec(src, rate_mbps, pattern, dst if pattern == "unicast" else None,
                                  priority=dist_prio)
    jitter = dict(base.jitter)
    if preset == "four":
        jitter = {fid: PRESET_JITTER for fid in config.flows}
    scenario = dataclasses.replace(base, priority_levels=levels, copy_priority=copy_prio,
                                   disturbance=disturbance, jitter=jitter)
    return dataclasses.replace(config, scenario=scenario)


def with_arm(config: SimConfig, arm: str) -> SimConfig:
    if arm not in ARMS:
        raise ValueError(f"unknown arm '{arm}'")
    return dataclasses.replace(config, scenario=dataclasses.replace(config.scenario, copies=(arm == "swa")))


def rate_steps(rate_min: float = 0, rate_max: float = 100, rate_step: float = 10) -> list[float]:
    if rate_step <= 0:
        raise ConfigError("rate step must be positive", field="rate-step")
    if rate_min < 0 or rate_max < rate_min:
        raise ConfigError("rate range must satisfy 0 <= min <= max", field="rate-max")
    steps, k = [], 0
    while True:
        r = rate_min + k * rate_step
        if r > rate_max + 1e-9:
            return steps
        steps.append(int(r) if float(r).is_integer() else r)
        k += 1


@dataclass
class SweepStep:
    rate_mbps: float
    pre: ScenarioResult
    swa: ScenarioResult

    def arm(self, name: str) -> ScenarioResult:
        return self.pre if name == "pre" else self.swa


def sweep(config: SimConfig, preset: str, rates: Iterable[float], seed: Optional[int] = None,
          periods: Optional[int] = None, trace: bool = False) -> list[SweepStep]:
    """Run both arms at every rate step, in ascending rate order."""
    steps = []
    for rate in sorted(rates):
        expanded = apply_preset(config, preset, rate)
        overrides = {}
        if seed is not None:
            overrides["seed"] = seed
        if periods is not None:
            overrides["periods"] = periods
        if overrides:
            expanded = dataclasses.replace(expanded, scenario=dataclasses.replace(expanded.scenario, **overrides))
        pre = Simulation(with_arm(expanded, "pre"), trace=trace).run()
        swa = Simulation(with_arm(expanded, "swa"), trace=trace).run()
        steps.append(SweepStep(rate, pre, swa))
    return steps


# ---------------------------------------------------------------------------
# reporting


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.1f}"
    return str(value)


def csv_rows(steps: Sequence[SweepStep], arm: str) -> list[list[str]]:
    rows = []
    for step in steps:
        result = step.arm(arm)
        for fid in sorted(result.flows):
            fr = result.flows[fid]
            lo, avg, hi, jit = fr.stats()
            drops = result.drops_for(fid)
            rows.append([str(fid), _fmt(step.rate_mbps), _fmt(lo), _fmt(avg), _fmt(hi), _fmt(jit),
                         str(fr.delivered)]
                        + [str(drops.get(r.value, 0)) for r in DropReason]
                        + [str(fr.order_violations), str(fr.max_copies)])
    return rows


def arm_csv(steps: Sequence[SweepStep], arm: str) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(csv_rows(steps, arm))
    return buf.getvalue()


SUMMARY_COLUMNS = ["flow_id", "rate_mbps", "pre_max_ns", "swa_min_ns", "swa_max_ns", "swa_jitter_ns",
                   "swa_max_le_pre_min", "copy_wins", "be_overflow_by_switch"]


def summary_csv(steps: Sequence[SweepStep]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for step in steps:
        overflow = {}
        for (vertex, fid, reason), n in sorted(step.swa.drops.items(), key=lambda kv: (kv[0][0], str(kv[0][1]), kv[0][2])):
            if fid is None and reason == DropReason.QUEUE_OVERFLOW.value:
                overflow[vertex] = overflow.get(vertex, 0) + n
        be = ";".join(f"{v}={n}" for v, n in sorted(overflow.items()))
        for fid in sorted(step.swa.flows):
            p_lo, _, p_hi, _ = step.pre.flows[fid].stats()
            s_lo, _, s_hi, s_jit = step.swa.flows[fid].stats()
            better = "" if s_hi is None or p_lo is None else ("yes" if s_hi <= p_lo else "no")
            writer.writerow([fid, _fmt(step.rate_mbps), _fmt(p_hi), _fmt(s_lo), _fmt(s_hi), _fmt(s_jit),
                             better, step.swa.flows[fid].copy_wins, be])
    return buf.getvalue()


def sweep_violations(steps: Sequence[SweepStep]) -> list[str]:
    """Invariant violations across all arms and rate steps (empty when everything held)."""
    found = []
    for step in steps:
        for arm in ARMS:
            for v in step.arm(arm).violations():
                found.append(f"{arm} @ {step.rate_mbps} Mbps: {v}")
        fires_pre = step.pre.tt_fires
        fires_swa = step.swa.tt_fires
        if fires_pre != fires_swa:
            found.append(f"@ {step.rate_mbps} Mbps: TT departures differ between arms")
        for fid, fr in step.swa.flows.items():
            base = step.pre.flows[fid].latencies
            worse = sum(1 for seq, lat in fr.latencies.items() if seq in base and lat > base[seq])
            if worse:
                found.append(f"@ {step.rate_mbps} Mbps: flow {fid} has {worse} frames slower than without copies")
    return found
