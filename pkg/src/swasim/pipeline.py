"""Per-switch forwarding steps: classifier, BE process, TT process, sequence
checking and arrival filtering (with the jitter-hold extension).

Each step is a deterministic transition over the switch tables that returns an
action for the simulation engine to carry out.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Union

from .model import (
    FilterTable, Frame, JitterMode, ScheduleTable, SequenceTable,
    StaticRouteTable, TimeNs, derive_tables,
)


class DropReason(str, enum.Enum):
    SEQUENCE_STALE = "sequence-stale"
    WINDOW_MISS = "window-miss"
    ROUTE_MISMATCH = "route-mismatch"
    FILTER_LATE = "filter-late"
    QUEUE_OVERFLOW = "queue-overflow"
    FAULT_INJECTED = "fault-injected"
    TT_ONLY = "tt-only"


class TrafficClass(str, enum.Enum):
    TT = "TT"
    COPY = "COPY"


@dataclass(slots=True)
class EnqueueEgress:
    port: int
    frame: Frame
    cls: TrafficClass


@dataclass(slots=True)
class Drop:
    frame: Frame
    reason: DropReason
    # sequence_check only: the copy skipped past an expected number
    gap: bool = False


@dataclass(slots=True)
class SetTimer:
    fire_time: TimeNs
    flow_id: int
    frame: Frame


@dataclass(slots=True)
class HoldUntil:
    time: TimeNs
    frame: Frame


@dataclass(slots=True)
class Deliver:
    port: int
    frame: Frame


PipelineAction = Union[EnqueueEgress, Drop, SetTimer, HoldUntil, Deliver]


def period_index(sequence: int) -> int:
    """Period in which a frame was emitted; sources number period k as k + 1."""
    return sequence - 1


def classify(frame: Frame, cloning: bool = True) -> tuple[Optional[Frame], Optional[Frame]]:
    """Split an ingress frame into its (TT-path, copy-path) parts."""
    if frame.iscopy:
        return None, frame
    if not cloning:
        return frame, None
    return frame, frame.clone()


def be_process(frame: Frame, routes: StaticRouteTable) -> Union[EnqueueEgress, Drop]:
    row = routes.get(frame.flow_id)
    if row is None or row.length_bytes != frame.length_bytes or row.input_port != frame.input_port:
        return Drop(frame, DropReason.ROUTE_MISMATCH)
    return EnqueueEgress(row.output_port, frame, TrafficClass.COPY)


def tt_process(frame: Frame, schedule: ScheduleTable) -> Union[SetTimer, Drop]:
    """Admission of a TT frame; on success a timer is armed for its departure.

    Windows and offsets repeat every period; the period index is taken from
    the arrival time relative to the window start.
    """
    row = schedule.get(frame.flow_id)
    if row is None or row.length_bytes != frame.length_bytes or row.input_port != frame.input_port:
        return Drop(frame, DropReason.ROUTE_MISMATCH)
    m = max(0, (frame.arrival_time - row.arrival_start) // row.period)
    shift = m * row.period
    if not (row.arrival_start + shift <= frame.arrival_time <= row.arrival_end + shift):
        return Drop(frame, DropReason.WINDOW_MISS)
    if frame.sequence <= row.sequence:
        return Drop(frame, DropReason.SEQUENCE_STALE)
    return SetTimer(row.offset + shift, frame.flow_id, frame)


def tt_fire(frame: Frame, schedule: ScheduleTable, sequences: SequenceTable) -> EnqueueEgress:
    """Timer expiry: commit the sequence number and restore the copy path."""
    row = schedule[frame.flow_id]
    row.sequence = frame.sequence
    if frame.sequence > sequences[frame.flow_id]:
        sequences[frame.flow_id] = frame.sequence
    return EnqueueEgress(row.output_port, frame, TrafficClass.TT)


def sequence_check(frame: Frame, sequences: SequenceTable) -> Optional[Drop]:
    """Copies pass strictly one by one; returns None when the copy passes."""
    current = sequences[frame.flow_id]
    if frame.sequence == current + 1:
        sequences[frame.flow_id] = frame.sequence
        return None
    return Drop(frame, DropReason.SEQUENCE_STALE, gap=frame.sequence > current + 1)


def hold_release_time(frame: Frame, schedule: ScheduleTable, jitter: TimeNs) -> TimeNs:
    row = schedule[frame.flow_id]
    return row.offset + period_index(frame.sequence) * row.period - jitter


def arrival_filter(frame: Frame, filters: FilterTable, schedule: ScheduleTable, now: TimeNs,
                   rewrite_iscopy: bool = False) -> Union[Deliver, HoldUntil, Drop]:
    """First arrival of each sequence number wins; later ones are dropped.

    Copies can be held back so they leave no earlier than ``jitter`` before
    their TT frame's departure. TT frames are never held.
    """
    row = filters[frame.flow_id]
    if frame.iscopy:
        if row.mode is JitterMode.TT_ONLY:
            return Drop(frame, DropReason.TT_ONLY)
        if row.mode is JitterMode.HOLD:
            release = hold_release_time(frame, schedule, row.jitter)
            if now < release:
                return HoldUntil(release, frame)
    if frame.sequence > row.sequence:
        row.sequence = frame.sequence
        if rewrite_iscopy:
            frame.iscopy = False
        return Deliver(schedule[frame.flow_id].output_port, frame)
    return Drop(frame, DropReason.FILTER_LATE)


@dataclass
class SwitchState:
    """The four tables of one switch plus its pending TT timers and injected faults."""

    switch_id: str
    schedule: ScheduleTable
    routes: StaticRouteTable = field(init=False)
    sequences: SequenceTable = field(init=False)
    filters: FilterTable = field(init=False)
    pending_timers: set = field(default_factory=set)
    # flow_id -> set of sequences to drop at the BE stage, None for all
    faults: dict = field(default_factory=dict)
    cloning: bool = True
    rewrite_iscopy: bool = False

    def __post_init__(self):
        self.routes, self.sequences, self.filters = derive_tables(self.schedule)

    def reset(self) -> None:
        """Sequence numbers return to zero on (re)initialisation."""
        for row in self.schedule.values():
            row.sequence = 0
        for flow_id in self.sequences:
            self.sequences[flow_id] = 0
        for row in self.filters.values():
            row.sequence = 0
        self.pending_timers.clear()

    def _faulted(self, frame: Frame) -> bool:
        if frame.flow_id not in self.faults:
            return False
        seqs = self.faults[frame.flow_id]
        return seqs is None or frame.sequence in seqs

    def ingress(self, frame: Frame) -> list[PipelineAction]:
        """Run classifier, TT process and BE process on a fully received frame."""
        actions: list[PipelineAction] = []
        tt, copy = classify(frame, self.cloning)
        if tt is not None:
            act = tt_process(tt, self.schedule)
            if isinstance(act, SetTimer):
                key = (act.flow_id, act.fire_time)
                if key in self.pending_timers:
                    raise AssertionError(f"{self.switch_id}: second timer for flow {act.flow_id} at {act.fire_time}")
                self.pending_timers.add(key)
            actions.append(act)
        if copy is not None:
            act = be_process(copy, self.routes)
            if isinstance(act, EnqueueEgress) and self._faulted(copy):
                act = Drop(copy, DropReason.FAULT_INJECTED)
            actions.append(act)
        return actions

    def fire(self, timer: SetTimer) -> EnqueueEgress:
        self.pending_timers.discard((timer.flow_id, timer.fire_time))
        return tt_fire(timer.frame, self.schedule, self.sequences)

    def check_copy(self, frame: Frame) -> Optional[Drop]:
        return sequence_check(frame, self.sequences)

    def filter_enabled(self, flow_id: int) -> bool:
        row = self.filters.get(flow_id)
        return row is not None and row.enabled

    def filter(self, frame: Frame, now: TimeNs) -> Union[Deliver, HoldUntil, Drop]:
        return arrival_filter(frame, self.filters, self.schedule, now, self.rewrite_iscopy)
