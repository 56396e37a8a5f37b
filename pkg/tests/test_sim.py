from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pracsim.params import CounterWidth, DramTimings, PracParams, acts_per_trefi
from pracsim.sim import (
    IDEAL, QPRAC, QPRAC_NOOP, QPRAC_PROACTIVE, ChannelState, ControllerError, MitigationPolicy,
    PatternError, SimStats, Trace, activate, array_to_ops, format_trace, iter_acts, ops_to_array,
    parse_trace, run_pattern, service_alert,
)

SMALL = DramTimings(rows_per_bank=256, banks_per_channel=4)


def hammer(row: int, n: int, bank: int = 0):
    return [("ACT", bank, row)] * n


def test_single_row_peak_is_n_bo_plus_abo_act():
    for pol in (QPRAC, QPRAC_NOOP, IDEAL):
        ch = ChannelState(PracParams(), SMALL, pol)
        s = run_pattern(ch, hammer(100, 36))
        assert s.max_unmitigated[(0, 100)] == 35
        assert s.alerts == 1 and s.mitigations_by_kind["alert"] == 1
        assert ch.counter(0, 100) == 1  # the 36th ACT after the mitigation


def test_empty_pattern():
    s = run_pattern(ChannelState(PracParams(), SMALL), [])
    assert s == SimStats()
    assert s.peak == 0


def test_out_of_range_names_step():
    ch = ChannelState(PracParams(), SMALL)
    with pytest.raises(PatternError, match="step 2"):
        run_pattern(ch, [("ACT", 0, 1), ("REF",), ("ACT", 0, 256)])
    with pytest.raises(PatternError, match="step 0"):
        run_pattern(ch, [("ACT", 9, 1)])
    with pytest.raises(PatternError):
        ops_to_array([("NOP",)])


def test_abo_window_is_enforced():
    ch = ChannelState(PracParams(n_bo=2), SMALL, auto_refresh=False)
    for _ in range(2 + 3):
        ch.activate(0, 10)
    assert ch.alert_active and ch.acts_in_abo_window == 3
    with pytest.raises(ControllerError):
        ch.activate(0, 10)
    assert service_alert(ch)
    activate(ch, 0, 10)


def test_abo_delay_suppresses_alerts_per_bank():
    p = PracParams(n_bo=1, n_mit=4)  # abo_delay = 4
    ch = ChannelState(p, SMALL, QPRAC_NOOP, auto_refresh=False)
    ch.activate(0, 10)
    assert ch.alert_active
    for _ in range(3):
        ch.activate(0, 20)
    ch.service_alert()
    for i in range(4):
        ch.activate(0, 30 + 5 * i)
        assert not ch.alert_active if i < 3 else ch.alert_active
    # another bank is not suppressed by bank 0's delay
    ch2 = ChannelState(p, SMALL, QPRAC_NOOP, auto_refresh=False)
    ch2.activate(0, 10)
    ch2.service_alert()
    ch2.activate(1, 10)
    assert ch2.alert_active


def test_victims_clip_at_bank_edges():
    ch = ChannelState(PracParams(n_bo=1), SMALL, QPRAC_NOOP, auto_refresh=False)
    ch.activate(0, 0)
    ch.service_alert()
    assert ch.counter(0, 1) == 1 and ch.counter(0, 2) == 1 and ch.counter(0, 0) == 0
    ch = ChannelState(PracParams(n_bo=1), SMALL, QPRAC_NOOP, auto_refresh=False)
    ch.activate(0, 255)
    ch.service_alert()
    assert ch.counter(0, 254) == 1 and ch.counter(0, 253) == 1


def test_one_ref_per_acts_per_trefi():
    ch = ChannelState(PracParams(n_bo=10_000), DramTimings(rows_per_bank=256), n_banks=1)
    apt = acts_per_trefi(ch.timings)
    s = run_pattern(ch, [("ACT", 0, i % 200) for i in range(10 * apt + 5)])
    assert s.refreshes == 10


def test_explicit_service_without_alert_is_noop():
    s = run_pattern(ChannelState(PracParams(), SMALL), [("SERVICE",), ("ACT", 0, 1)])
    assert s.noop_services == 1 and s.rfms_issued == 0


def test_pattern_longer_than_window():
    t = DramTimings(rows_per_bank=256, t_refw=5000, t_refi=1000, t_rfc=100)
    with pytest.raises(PatternError):
        run_pattern(ChannelState(PracParams(), t, n_banks=1), hammer(1, 500))
    run_pattern(ChannelState(PracParams(), t, n_banks=1), hammer(1, 500), multi_window=True)


def test_psq_capacity_validation():
    with pytest.raises(ValueError):
        ChannelState(PracParams(n_mit=4), SMALL, MitigationPolicy(queue_capacity=3))
    with pytest.raises(ValueError):
        ChannelState(PracParams(n_mit=4), SMALL, MitigationPolicy(queue_capacity=4,
                                                                   proactive="every_ref"))


patterns = st.lists(
    st.tuples(st.integers(0, 3), st.integers(0, 40), st.integers(1, 50)), min_size=1, max_size=40
).map(lambda bursts: [("ACT", b, r) for b, r, n in bursts for _ in range(n)])


@settings(max_examples=60, deadline=None)
@given(patterns, st.sampled_from([QPRAC, QPRAC_NOOP, QPRAC_PROACTIVE, IDEAL]))
def test_determinism(ops, pol):
    a = run_pattern(ChannelState(PracParams(n_bo=8), SMALL, pol), ops)
    b = run_pattern(ChannelState(PracParams(n_bo=8), SMALL, pol), ops)
    assert a == b and a.to_json() == b.to_json()


@settings(max_examples=60, deadline=None)
@given(patterns, st.sampled_from([QPRAC, QPRAC_NOOP, QPRAC_PROACTIVE, IDEAL]))
def test_counter_conservation(ops, pol):
    """Every counter increment is an ACT or a victim refresh."""
    p = PracParams(n_bo=8)
    ch = ChannelState(p, SMALL, pol)
    s = run_pattern(ch, ops)
    mitigations = sum(s.mitigations_by_kind.values())
    increments = s.activations + 2 * p.blast_radius * mitigations
    # a mitigation zeroes its row; clipping at bank edges only removes increments
    total = sum(ch.counter(b, r) for b in range(ch.n_banks) for r in range(SMALL.rows_per_bank))
    assert total <= increments
    assert all(v <= CounterWidth().max_value for v in s.max_unmitigated.values())
    assert all(v >= 0 for v in (s.alerts, s.rfms_issued, s.refreshes, s.bypasses))


@settings(max_examples=60, deadline=None)
@given(patterns)
def test_proactive_never_adds_alerts(ops):
    p = PracParams(n_bo=8)
    t = DramTimings(rows_per_bank=256, banks_per_channel=4, t_refi=800)
    off = run_pattern(ChannelState(p, t, QPRAC), ops)
    on = run_pattern(ChannelState(p, t, QPRAC_PROACTIVE), ops)
    assert on.alerts <= off.alerts


def test_stats_json_round_trip():
    s = run_pattern(ChannelState(PracParams(n_bo=4), SMALL), hammer(3, 50) + hammer(9, 20, bank=2))
    d = json.loads(s.to_json())
    assert SimStats.from_json_dict(d) == s
    assert list(d) == sorted(d)


def test_trace_text_round_trip(tmp_path):
    ops = [("ACT", 0, 1), ("REF",), ("SERVICE",), ("ACT", 3, 255)]
    assert parse_trace(format_trace(ops)) == ops
    assert array_to_ops(ops_to_array(ops)) == ops
    assert list(iter_acts(ops)) == [(0, 1), (3, 255)]
    assert parse_trace("# c\n act 1 2  # x\n\nref\n") == [("ACT", 1, 2), ("REF",)]
    for bad in ("ACT 1", "ACT a b", "JUMP"):
        with pytest.raises(PatternError):
            parse_trace(bad)
    tr = Trace(ops, PracParams(n_mit=2), SMALL, QPRAC, 4)
    path = tmp_path / "t.trace"
    tr.save(path)
    back = Trace.load(path)
    assert back == tr
    assert back.replay() == tr.replay()


def test_recorded_ops_replay_identically():
    ch = ChannelState(PracParams(n_bo=4), SMALL, QPRAC, record_cap=10_000)
    run_pattern(ch, hammer(5, 200) + hammer(30, 100, bank=1))
    tr = Trace(array_to_ops(ch.recorded_ops()), ch.params, ch.timings, ch.policy, ch.n_banks)
    assert tr.replay() == ch.stats()


def test_copy_is_independent():
    ch = ChannelState(PracParams(n_bo=4), SMALL)
    run_pattern(ch, hammer(5, 3))
    other = ch.copy()
    other.step(0, 5)
    assert ch.counter(0, 5) == 3 and other.counter(0, 5) == 4
    assert np.array_equal(ch.queue_rows(0), [5])
