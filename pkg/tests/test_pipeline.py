from hypothesis import given, strategies as st

from swasim.model import Frame, JitterMode, ScheduleRow, ScheduleTable, SequenceTable
from swasim.pipeline import (
    Deliver, Drop, DropReason, EnqueueEgress, HoldUntil, SetTimer, SwitchState, TrafficClass,
    arrival_filter, be_process, classify, sequence_check, tt_fire, tt_process,
)

P1 = 524288


def tts(name="TTS-2", rows=None):
    rows = rows or [ScheduleRow(1, P1, 128, 0, 1, 22928, 23928, 45056)]
    return SwitchState(name, ScheduleTable.from_rows(rows))


def tt_frame(seq=1, t=23000, port=0, length=128, flow=1):
    return Frame(flow, seq, length, input_port=port, arrival_time=t)


# -- classifier --------------------------------------------------------------

def test_classify_tt_frame_clones():
    f = tt_frame()
    tt, copy = classify(f)
    assert tt is f and copy is not f and copy.iscopy and not tt.iscopy


def test_classify_copy_passes_through():
    c = tt_frame().clone()
    assert classify(c) == (None, c)


def test_classify_without_cloning():
    f = tt_frame()
    assert classify(f, cloning=False) == (f, None)


def test_clones_preserve_ingress_order():
    frames = [tt_frame(seq=s) for s in (1, 2)]
    copies = [classify(f)[1] for f in frames]
    assert [c.sequence for c in copies] == [1, 2]


# -- BE process --------------------------------------------------------------

def test_be_process_routes_copy():
    state = SwitchState("TTS-1", ScheduleTable.from_rows([ScheduleRow(1, P1, 128, 4, 7, 400, 1400, 22528)]))
    act = be_process(Frame(1, 1, 128, input_port=4, iscopy=True), state.routes)
    assert isinstance(act, EnqueueEgress) and act.port == 7 and act.cls is TrafficClass.COPY


def test_be_process_mismatches():
    state = SwitchState("TTS-1", ScheduleTable.from_rows([ScheduleRow(1, P1, 128, 4, 7, 400, 1400, 22528)]))
    for frame in (Frame(1, 1, 129, input_port=4, iscopy=True),
                  Frame(1, 1, 128, input_port=5, iscopy=True),
                  Frame(9, 1, 128, input_port=4, iscopy=True)):
        act = be_process(frame, state.routes)
        assert isinstance(act, Drop) and act.reason is DropReason.ROUTE_MISMATCH


# -- TT process --------------------------------------------------------------

def test_tt_process_accepts_in_window():
    state = tts()
    act = tt_process(tt_frame(), state.schedule)
    assert isinstance(act, SetTimer) and act.fire_time == 45056
    out = tt_fire(act.frame, state.schedule, state.sequences)
    assert out.port == 1 and out.cls is TrafficClass.TT
    assert state.schedule[1].sequence == 1 and state.sequences[1] == 1


def test_tt_process_later_period_shifts_timer():
    state = tts()
    act = tt_process(tt_frame(seq=3, t=23000 + 2 * P1), state.schedule)
    assert act.fire_time == 45056 + 2 * P1


def test_tt_process_window_edges():
    state = tts()
    assert isinstance(tt_process(tt_frame(t=22928), state.schedule), SetTimer)
    assert isinstance(tt_process(tt_frame(t=23928), state.schedule), SetTimer)
    for t in (22927, 23929):
        act = tt_process(tt_frame(t=t), state.schedule)
        assert isinstance(act, Drop) and act.reason is DropReason.WINDOW_MISS


def test_tt_process_stale_sequence():
    state = tts()
    state.schedule[1].sequence = 1
    act = tt_process(tt_frame(seq=1), state.schedule)
    assert isinstance(act, Drop) and act.reason is DropReason.SEQUENCE_STALE


def test_tt_process_route_mismatch():
    state = tts()
    act = tt_process(tt_frame(length=64), state.schedule)
    assert act.reason is DropReason.ROUTE_MISMATCH


def test_tt_fire_restores_copy_path():
    state = tts()
    state.sequences[1] = 3
    tt_fire(tt_frame(seq=5), state.schedule, state.sequences)
    assert state.sequences[1] == 5
    # never moves the copy path backwards
    tt_fire(tt_frame(seq=4), state.schedule, state.sequences)
    assert state.sequences[1] == 5


# -- sequence check ----------------------------------------------------------

def copy(seq):
    return Frame(1, seq, 128, iscopy=True)


def test_sequence_check_successor_passes():
    seqs = SequenceTable({1: 3})
    assert sequence_check(copy(4), seqs) is None and seqs[1] == 4


def test_sequence_check_gap_and_duplicate():
    seqs = SequenceTable({1: 3})
    gap = sequence_check(copy(5), seqs)
    assert gap.reason is DropReason.SEQUENCE_STALE and gap.gap and seqs[1] == 3
    dup = sequence_check(copy(3), seqs)
    assert dup.reason is DropReason.SEQUENCE_STALE and not dup.gap


def test_sequence_gap_recovered_by_tt_frame():
    state = tts()
    state.sequences[1] = 3
    assert sequence_check(copy(5), state.sequences) is not None
    tt_fire(tt_frame(seq=4), state.schedule, state.sequences)
    assert sequence_check(copy(5), state.sequences) is None


@given(st.lists(st.integers(1, 30), max_size=40))
def test_sequence_check_passes_strictly_one_by_one(arrivals):
    seqs = SequenceTable({1: 0})
    passed = [s for s in arrivals if sequence_check(copy(s), seqs) is None]
    assert passed == list(range(1, len(passed) + 1))


# -- arrival filter ----------------------------------------------------------

def filtered(jitter=None):
    state = SwitchState("TTS-3", ScheduleTable.from_rows([ScheduleRow(1, P1, 128, 0, 2, 45456, 46456, 67584)]))
    row = state.filters[1]
    row.enabled = True
    if jitter is not None:
        row.configure_jitter(jitter, P1)
    return state


def test_filter_copy_first_then_tt():
    s = filtered()
    assert isinstance(arrival_filter(copy(7), s.filters, s.schedule, 0), Deliver)
    act = arrival_filter(tt_frame(seq=7), s.filters, s.schedule, 0)
    assert act.reason is DropReason.FILTER_LATE


def test_filter_tt_first_then_copy():
    s = filtered()
    assert isinstance(arrival_filter(tt_frame(seq=7), s.filters, s.schedule, 0), Deliver)
    assert arrival_filter(copy(7), s.filters, s.schedule, 0).reason is DropReason.FILTER_LATE


def test_filter_holds_early_copy():
    s = filtered(jitter=10_000)
    m = 4
    now = 67584 + m * P1 - 30_000
    act = arrival_filter(copy(m + 1), s.filters, s.schedule, now)
    assert isinstance(act, HoldUntil) and act.time == 67584 + m * P1 - 10_000
    assert s.filters[1].sequence == 0
    assert isinstance(arrival_filter(copy(m + 1), s.filters, s.schedule, act.time), Deliver)


def test_filter_never_holds_tt_frames():
    s = filtered(jitter=10_000)
    assert isinstance(arrival_filter(tt_frame(seq=1), s.filters, s.schedule, 0), Deliver)


def test_filter_tt_only_mode():
    s = filtered(jitter=-1)
    assert s.filters[1].mode is JitterMode.TT_ONLY
    assert arrival_filter(copy(1), s.filters, s.schedule, 0).reason is DropReason.TT_ONLY


def test_filter_can_rewrite_iscopy():
    s = filtered()
    c = copy(1)
    act = arrival_filter(c, s.filters, s.schedule, 0, rewrite_iscopy=True)
    assert isinstance(act, Deliver) and not c.iscopy


@given(st.lists(st.tuples(st.integers(1, 20), st.booleans()), max_size=60))
def test_filter_delivers_each_sequence_at_most_once_in_order(arrivals):
    s = filtered()
    delivered = []
    for seq, is_copy in arrivals:
        f = copy(seq) if is_copy else tt_frame(seq=seq)
        if isinstance(arrival_filter(f, s.filters, s.schedule, 0), Deliver):
            delivered.append(seq)
    assert delivered == sorted(set(delivered))


# -- switch state ------------------------------------------------------------

def test_switch_ingress_produces_timer_and_copy():
    state = tts()
    acts = state.ingress(tt_frame())
    assert isinstance(acts[0], SetTimer) and isinstance(acts[1], EnqueueEgress)
    assert state.pending_timers == {(1, 45056)}
    state.fire(acts[0])
    assert not state.pending_timers


def test_switch_fault_drops_copy_at_be_stage():
    state = tts()
    state.faults[1] = {2}
    assert isinstance(state.ingress(tt_frame(seq=1))[1], EnqueueEgress)
    act = state.ingress(tt_frame(seq=2, t=23000 + P1))[1]
    assert act.reason is DropReason.FAULT_INJECTED


def test_switch_reset_zeroes_sequences():
    state = tts()
    state.sequences[1] = 9
    state.schedule[1].sequence = 9
    state.filters[1].sequence = 9
    state.reset()
    assert state.sequences[1] == state.schedule[1].sequence == state.filters[1].sequence == 0
