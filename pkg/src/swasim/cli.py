"""Command-line front end.

Exit codes: 0 success, 1 invariant violation (or infeasible/invalid schedule),
2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigDocument, format_config, load_config
from .engine import SimulationFault
from .jitter import JitterAnalysisError, last_hop_port_flows, safe_jitter_upper
from .model import ConfigError
from .scenarios import (
    PRESETS, SweepStep, arm_csv, rate_steps, summary_csv, sweep, sweep_violations, with_arm,
)
from .engine import Simulation
from .scheduler import SchedulingInfeasible, schedule, validate

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2
OUT_ENV = "SWASIM_OUT"
TRACE_COLUMNS = "arm,rate_mbps,time_ns,vertex,event,flow_id,sequence,kind,detail\n"


def bundled_config(name: str) -> Path:
    return Path(str(resources.files("swasim") / "data" / name))


def resolve_config(path: Optional[str], default: str = "fig4.cfg") -> Path:
    """A path on disk, or the name of a bundled configuration."""
    if path is None:
        return bundled_config(default)
    p = Path(path)
    if not p.exists() and p.name == str(path) and bundled_config(p.name).exists():
        return bundled_config(p.name)
    return p


def _load(path: Optional[str], default: str = "fig4.cfg") -> ConfigDocument:
    return load_config(resolve_config(path, default))


def _validation_problems(doc: ConfigDocument, enforce_recovery: bool = False) -> list[str]:
    sched = doc.scheduler
    return validate(doc.topology, doc.flows.values(), doc.schedules,
                    enforce_recovery=enforce_recovery, c=sched.c).problems


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    doc = _load(args.config)
    problems = _validation_problems(doc)
    if problems:
        for p in problems:
            print(f"invalid schedule: {p}", file=sys.stderr)
        return EXIT_CONFIG
    config = doc.sim_config(name=args.preset or "config")
    out = Path(os.environ.get(OUT_ENV) or args.out)
    out.mkdir(parents=True, exist_ok=True)
    periods = args.periods
    seed = args.seed
    try:
        if args.preset:
            rates = rate_steps(args.rate_min, args.rate_max, args.rate_step)
            steps = sweep(config, args.preset, rates, seed=seed, periods=periods, trace=args.trace)
            tag = args.preset
        else:
            sc = config.scenario
            overrides = {k: v for k, v in (("seed", seed), ("periods", periods)) if v is not None}
            config = dataclasses.replace(config, scenario=dataclasses.replace(sc, **overrides))
            rate = sc.disturbance.rate_mbps if sc.disturbance else 0
            steps = [SweepStep(rate, Simulation(with_arm(config, "pre"), trace=args.trace).run(),
                               Simulation(with_arm(config, "swa"), trace=args.trace).run())]
            tag = "config"
    except SimulationFault as exc:
        print(f"simulation fault: {exc}", file=sys.stderr)
        return EXIT_VIOLATION

    (out / f"{tag}_pre.csv").write_text(arm_csv(steps, "pre"))
    (out / f"{tag}_swa.csv").write_text(arm_csv(steps, "swa"))
    (out / f"{tag}_summary.csv").write_text(summary_csv(steps))
    if args.trace:
        lines = [TRACE_COLUMNS]
        for step in steps:
            for arm in ("pre", "swa"):
                for rec in step.arm(arm).trace or ():
                    t, vertex, what, fid, seq, kind, detail = rec
                    lines.append(f"{arm},{step.rate_mbps},{t},{vertex},{what},"
                                 f"{'' if fid is None else fid},{seq},{kind},{detail}\n")
        (out / f"{tag}_trace.csv").write_text("".join(lines))

    print(f"{'rate':>6} {'flow':>4} {'pre max':>9} {'swa min':>9} {'swa max':>9} {'jitter':>7}")
    for step in steps:
        for fid in sorted(step.swa.flows):
            p_hi = step.pre.flows[fid].stats()[2]
            lo, _, hi, jit = step.swa.flows[fid].stats()
            print(f"{step.rate_mbps:>6} {fid:>4} {p_hi!s:>9} {lo!s:>9} {hi!s:>9} {jit!s:>7}")
    violations = sweep_violations(steps)
    for v in violations:
        print(f"violation: {v}", file=sys.stderr)
    print(f"wrote {tag}_pre.csv, {tag}_swa.csv, {tag}_summary.csv to {out}")
    return EXIT_VIOLATION if violations else EXIT_OK


def jitter_report(doc: ConfigDocument) -> tuple[list[str], list[str]]:
    """Report lines and reference mismatches for every last-hop egress port."""
    lines, mismatches = [], []
    groups = last_hop_port_flows(doc.topology, doc.flows.values(), doc.schedules)
    reference = doc.scenario.reference_jitter
    for (switch, port), flows in sorted(groups.items()):
        lines.append(f"port {switch}:{port}")
        lines.append(f"  {'flow-id':>7}  {'upper-ns':>10}  attained-by")
        tx = {f.flow_id: f.tx_time for f in flows}
        for entry in safe_jitter_upper(flows):
            if entry.contributing_pair is None:
                how = "period"
            else:
                j, gap = entry.contributing_pair
                how = f"g({entry.flow_id},{j})={gap} - C({j})={tx[j]}"
            lines.append(f"  {entry.flow_id:>7}  {entry.upper:>10}  {how}")
            expected = reference.get(entry.flow_id)
            if expected is None:
                continue
            if expected == entry.upper:
                lines.append(f"           reference {expected} reproduced")
                continue
            matching = [j for j, term in sorted(entry.terms.items()) if term == expected]
            note = f"; it equals the g({entry.flow_id},{matching[0]}) - C({matching[0]}) term alone" if matching else ""
            msg = (f"flow {entry.flow_id}: reference {expected} NOT reproduced, "
                   f"computed {entry.upper}{note}")
            mismatches.append(msg)
            lines.append(f"           {msg}")
    return lines, mismatches


def cmd_analyze_jitter(args) -> int:
    doc = _load(args.config)
    try:
        lines, _ = jitter_report(doc)
    except JitterAnalysisError as exc:
        print(f"jitter analysis failed: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    print("\n".join(lines))
    return EXIT_OK


def cmd_schedule(args) -> int:
    doc = _load(args.config)
    sched = doc.scheduler
    if args.hop_slack is not None:
        sched.hop_slack = args.hop_slack
    try:
        rows = schedule(doc.topology, doc.flows.values(), hop_slack=sched.hop_slack,
                        granularity=sched.granularity, enforce_recovery=sched.enforce_recovery, c=sched.c)
    except SchedulingInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    doc.schedules = rows
    text = format_config(doc)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {len(rows)} schedule rows to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    doc = _load(args.solution, default="table2.cfg")
    enforce = args.enforce_recovery if args.enforce_recovery is not None else False
    problems = _validation_problems(doc, enforce_recovery=enforce)
    for p in problems:
        print(f"violation: {p}")
    print(f"{len(problems)} violation(s) in {len(doc.schedules)} schedule rows")
    return EXIT_VIOLATION if problems else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swasim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a preset sweep (or the config's own scenario)")
    run.add_argument("--preset", choices=PRESETS)
    run.add_argument("--config", help="config file, or a bundled name such as fig4.cfg")
    run.add_argument("--seed", type=int)
    run.add_argument("--rate-min", type=float, default=0)
    run.add_argument("--rate-max", type=float, default=100)
    run.add_argument("--rate-step", type=float, default=10)
    run.add_argument("--periods", type=int)
    run.add_argument("--out", default="out", help=f"output directory (overridden by ${OUT_ENV})")
    run.add_argument("--trace", action="store_true", help="also write a per-event trace CSV")
    run.set_defaults(func=cmd_run)

    aj = sub.add_parser("analyze-jitter", help="safe jitter bounds at each last-hop egress port")
    aj.add_argument("--config")
    aj.set_defaults(func=cmd_analyze_jitter)

    sc = sub.add_parser("schedule", help="compute offsets for a problem file")
    sc.add_argument("--config", required=True)
    sc.add_argument("--out")
    sc.add_argument("--hop-slack", type=int)
    sc.set_defaults(func=cmd_schedule)

    va = sub.add_parser("validate", help="check a solution file")
    va.add_argument("--solution", "--config", dest="solution")
    va.add_argument("--enforce-recovery", action=argparse.BooleanOptionalAction, default=None)
    va.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
