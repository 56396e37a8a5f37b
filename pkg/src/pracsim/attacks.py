"""Adversarial activation patterns and their outcome against a defense.

Each attack drives a fresh ``ChannelState`` and reports the highest count
the target row reached before its first mitigation.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import _attack_kernels as AK
from . import _kernels as K
from .params import DramTimings, PracParams
from .sim import ChannelState, MitigationPolicy, Trace, array_to_ops

WAVE_POLICIES = ("psq", "ideal")
# round boundaries the wave attack's end-game search may start from
WAVE_CHECKPOINTS = 4
# relabelled end games replayed in full before settling on one
WAVE_VERIFY = 4


@dataclass
class AttackReport:
    attack: str
    target_row: int
    max_unmitigated: int
    total_acts_used: int
    rounds: int = 0
    window_exhausted: bool = False
    cycles: int = 0
    alerts: int = 0
    bypasses: int = 0
    timeline_ns: int = 0
    config: dict = field(default_factory=dict)
    variants: dict = field(default_factory=dict)
    trace: Trace | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if min(self.max_unmitigated, self.total_acts_used, self.rounds) < 0:
            raise ValueError("attack counts must be non-negative")

    def to_json_dict(self) -> dict:
        return {
            "attack": self.attack,
            "target_row": self.target_row,
            "max_unmitigated": self.max_unmitigated,
            "total_acts_used": self.total_acts_used,
            "rounds": self.rounds,
            "window_exhausted": self.window_exhausted,
            "cycles": self.cycles,
            "alerts": self.alerts,
            "bypasses": self.bypasses,
            "timeline_ns": self.timeline_ns,
            "config": self.config,
            "variants": self.variants,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"


def _stride(params: PracParams) -> int:
    # aggressors this far apart never share a victim
    return 2 * params.blast_radius + 1


def _spaced_rows(n: int, params: PracParams, start: int = 0) -> np.ndarray:
    s = _stride(params)
    return params.blast_radius + s * (start + np.arange(n, dtype=np.int64))


def _report(attack: str, ch: ChannelState, target: int, cycles: int, config: dict,
            exhausted: bool, rounds: int = 0, record: bool = False) -> AttackReport:
    st = ch.stats()
    trace = None
    if record:
        trace = Trace(array_to_ops(ch.recorded_ops()), ch.params, ch.timings, ch.policy, ch.n_banks)
    return AttackReport(attack=attack, target_row=int(target),
                        max_unmitigated=ch.max_unmitigated(0, target),
                        total_acts_used=st.activations, rounds=rounds,
                        window_exhausted=exhausted, cycles=cycles, alerts=st.alerts,
                        bypasses=st.bypasses, timeline_ns=st.timeline_ns, config=config,
                        trace=trace)


def _record_cap(record: bool, timings: DramTimings, n_banks: int = 1) -> int:
    if not record:
        return 0
    # one event per ACT slot plus REFs and services, with headroom
    return 2 * n_banks * (timings.t_refw // timings.t_rc) + 16


def _check_rows(needed: int, timings: DramTimings) -> None:
    if needed > timings.rows_per_bank:
        raise ValueError(f"attack layout needs {needed} rows, bank has {timings.rows_per_bank}")


# ------------------------------------------------------------------ FIFO attacks

def toggle_forget(queue_size: int, tbit: int, params: PracParams | None = None,
                  timings: DramTimings | None = None, ref_mitigation: bool = False,
                  abo_target_acts: int = 2, record: bool = False) -> AttackReport:
    """Toggle+Forget against a t-bit FIFO of ``queue_size`` entries."""
    params = params or PracParams()
    timings = timings or DramTimings()
    if not 1 <= queue_size <= 64:
        raise ValueError("queue_size must be in [1, 64]")
    if abo_target_acts < 1:
        raise ValueError("abo_target_acts must be >= 1")
    policy = MitigationPolicy(queue_kind="fifo_tbit", tbit=tbit, queue_capacity=queue_size,
                              opportunistic=False, fifo_ref_mitigation=ref_mitigation)
    ch = ChannelState(params, timings, policy, n_banks=1, record_cap=_record_cap(record, timings))
    rows = _spaced_rows(queue_size + 1, params)
    _check_rows(int(rows[-1]) + params.blast_radius + 1, timings)
    fill, target = rows[:-1].copy(), int(rows[-1])
    cycles = AK.k_toggle_forget(*ch._a, fill, target, min(abo_target_acts, params.abo_act),
                                timings.t_refw)
    ch._raise_if_error()
    config = {"queue_size": queue_size, "tbit": tbit, "threshold": policy.mitigation_threshold,
              "n_mit": params.n_mit, "ref_mitigation": ref_mitigation}
    return _report("toggle-forget", ch, target, int(cycles), config, cycles == 0, record=record)


def _fill_escape_once(threshold: int, queue_size: int, params: PracParams, timings: DramTimings,
                      ref_mitigation: bool, record: bool) -> AttackReport:
    policy = MitigationPolicy(queue_kind="fifo_fullcount", threshold=threshold,
                              queue_capacity=queue_size, opportunistic=False,
                              fifo_ref_mitigation=ref_mitigation)
    ch = ChannelState(params, timings, policy, n_banks=1, record_cap=_record_cap(record, timings))
    # enough spare rows to refill after every removal path
    npool = queue_size + params.n_mit + 2
    rows = _spaced_rows(npool + 1, params)
    _check_rows(int(rows[-1]) + params.blast_radius + 1, timings)
    pool, target = rows[1:].copy(), int(rows[0])
    cycles = AK.k_fill_escape(*ch._a, pool, target, timings.t_refw)
    ch._raise_if_error()
    config = {"threshold": threshold, "queue_size": queue_size, "n_mit": params.n_mit,
              "ref_mitigation": ref_mitigation}
    return _report("fill-escape", ch, target, int(cycles), config, cycles == 0, record=record)


def fill_escape(threshold: int, queue_size: int = 16, params: PracParams | None = None,
                timings: DramTimings | None = None, ref_mitigation: bool | None = None,
                record: bool = False) -> AttackReport:
    """Fill+Escape against a full-count FIFO.

    With ``ref_mitigation=None`` both REF behaviours are run and the higher
    (worse for the defense) count is reported; both land in ``variants``.
    """
    params = params or PracParams(n_mit=4)
    timings = timings or DramTimings()
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    if queue_size < 1:
        raise ValueError("queue_size must be >= 1")
    choices = (False, True) if ref_mitigation is None else (ref_mitigation,)
    runs = {ref: _fill_escape_once(threshold, queue_size, params, timings, ref, record)
            for ref in choices}
    best = max(runs.values(), key=lambda r: r.max_unmitigated)
    best.variants = {("ref_mitigation" if ref else "no_ref_mitigation"): r.max_unmitigated
                     for ref, r in sorted(runs.items())}
    return best


def _blocked_once(threshold: int, queue_size: int, params: PracParams, timings: DramTimings,
                  ref_mitigation: bool, n_banks: int, record: bool) -> AttackReport:
    if threshold & (threshold - 1):
        raise ValueError("a t-bit threshold must be a power of two")
    policy = MitigationPolicy(queue_kind="fifo_tbit", tbit=threshold.bit_length() - 1,
                              queue_capacity=queue_size, opportunistic=False,
                              fifo_ref_mitigation=ref_mitigation, block_abo_toggle=True)
    ch = ChannelState(params, timings, policy, n_banks=n_banks,
                      record_cap=_record_cap(record, timings, n_banks))
    npool = 2 * queue_size + params.n_mit
    rows = _spaced_rows(npool + 1, params)
    _check_rows(int(rows[-1]) + params.blast_radius + 1, timings)
    pool, target = rows[1:].copy(), int(rows[0])
    cycles = AK.k_blocked_tbit(*ch._a, pool, target, timings.t_refw)
    ch._raise_if_error()
    config = {"threshold": threshold, "queue_size": queue_size, "n_mit": params.n_mit,
              "ref_mitigation": ref_mitigation, "n_banks": n_banks}
    return _report("blocked-tbit", ch, target, int(cycles), config, cycles == 0, record=record)


def blocked_tbit(threshold: int, queue_size: int = 16, params: PracParams | None = None,
                 timings: DramTimings | None = None, ref_mitigation: bool | None = None,
                 n_banks: int | None = None, record: bool = False) -> AttackReport:
    """Parallel-bank attack on a t-bit FIFO that ignores toggles from ABO ACTs."""
    params = params or PracParams()
    timings = timings or DramTimings()
    if queue_size < 1:
        raise ValueError("queue_size must be >= 1")
    n_banks = n_banks or timings.banks_per_channel
    choices = (False, True) if ref_mitigation is None else (ref_mitigation,)
    runs = {ref: _blocked_once(threshold, queue_size, params, timings, ref, n_banks, record)
            for ref in choices}
    best = max(runs.values(), key=lambda r: r.max_unmitigated)
    best.variants = {("ref_mitigation" if ref else "no_ref_mitigation"): r.max_unmitigated
                     for ref, r in sorted(runs.items())}
    return best


def fill_escape_estimate(threshold: int, queue_size: int = 16, params: PracParams | None = None,
                         timings: DramTimings | None = None) -> int:
    """Closed form for Fill+Escape without REF removals.

    The target gets ``threshold - 1`` warm-up ACTs, the queue an initial fill,
    and every later alert costs ``n_mit`` fresh rows of ``threshold`` ACTs
    plus one all-bank RFM burst, buying ``abo_act`` target ACTs.
    """
    from .params import act_time_budget_ns
    params = params or PracParams(n_mit=4)
    timings = timings or DramTimings()
    budget = act_time_budget_ns(timings)
    t_rc = timings.t_rc
    setup = (threshold - 1) * t_rc + queue_size * threshold * t_rc
    remaining = max(0, budget - setup)
    per_cycle = (params.n_mit * threshold + params.abo_act) * t_rc + params.n_mit * timings.t_rfm_ab
    # the initial fill already pays for the first cycle
    cycles = 1 + remaining // per_cycle if remaining > 0 else 0
    return threshold - 1 + params.abo_act * cycles


# ------------------------------------------------------------------ wave attack

class _Wave:
    """One wave-attack run on bank 0 of a single-bank channel."""

    def __init__(self, policy: MitigationPolicy, params: PracParams, timings: DramTimings,
                 layout: np.ndarray, limit: int, record_cap: int = 0):
        self.ch = ChannelState(params, timings, policy, n_banks=1, record_cap=record_cap)
        self.layout = layout
        self.limit = limit
        self.params = params

    def setup(self) -> bool:
        reps = self.params.n_bo - 1
        if reps == 0:
            return True
        done = K.k_hammer(*self.ch._a, self.layout, reps, self.limit)
        return int(done) == reps

    def rounds(self, stop: int | None = None, keep: int = 0):
        """Run full rounds until one row is left, or exactly ``stop`` rounds.

        Returns (checkpoints, pool, rounds done, exhausted). Checkpoints are
        (round index, state copy, pool) at the start of the last ``keep``
        rounds that began with at least two rows.
        """
        pool = self.layout.copy()
        n, done = len(pool), 0
        marks: deque = deque(maxlen=keep) if keep else deque(maxlen=1)
        while n > 1 and (stop is None or done < stop):
            if keep:
                marks.append((done, self.ch.copy(), pool[:n].copy()))
            left = int(K.k_wave_round(*self.ch._a, pool, n, self.limit))
            if left < 0:
                return list(marks) if keep else [], pool[:n].copy(), done, True
            n, done = left, done + 1
        return list(marks) if keep else [], pool[:n].copy(), done, False


def _finish(ch: ChannelState, others: np.ndarray, j: int, fillers: np.ndarray, f: int,
            x: int, limit: int) -> tuple[int, list[int]]:
    lost = np.zeros(max(1, len(others)), dtype=np.int64)
    val, nl = K.k_wave_finish(*ch._a, others, j, fillers, f, x, lost, limit)
    return int(val), [int(r) for r in lost[:int(nl)]]


@dataclass(frozen=True)
class _Plan:
    estimate: int
    plain: int
    round_index: int
    x_pos: int
    prefix: int
    fill: int
    decoys: tuple[int, ...]


def _search_end_game(marks, fillers: np.ndarray, params: PracParams, limit: int) -> list[_Plan]:
    """Score every (checkpoint, prefix, fill) end game, best estimate first.

    The estimate adds one ACT per neighbour of the final row that is lost
    during its hammering, which relabelling can arrange.
    """
    br, d = params.blast_radius, params.alert_period
    plans = []
    for k, state, pool in marks:
        xp = len(pool) - 1  # the row activated last in each round
        x = int(pool[xp])
        others = np.delete(pool, xp)
        for j in range(len(others) + 1):
            for f in range(d + 1):
                val, lost = _finish(state.copy(), others, j, fillers, f, x, limit)
                decoys = tuple(lost[-br:]) if br else ()
                plans.append(_Plan(val + len(decoys), val, k, xp, j, f, decoys))
    plans.sort(key=lambda p: (-p.estimate, -p.plain, -p.round_index, -p.x_pos, p.prefix, p.fill))
    return plans


def _as_policy(policy: MitigationPolicy | str) -> MitigationPolicy:
    if isinstance(policy, MitigationPolicy):
        return policy
    if policy not in WAVE_POLICIES:
        raise ValueError(f"wave attack supports queue kinds {WAVE_POLICIES}")
    return MitigationPolicy(queue_kind=policy)


def wave_attack(policy: MitigationPolicy | str, r1: int, params: PracParams | None = None,
                timings: DramTimings | None = None, enforce_window: bool = True,
                record: bool = False) -> AttackReport:
    """Wave (feinting) attack with a perfect-knowledge attacker.

    Setup warms ``r1`` rows to ``n_bo - 1``. Online rounds activate every
    surviving row once; mitigated rows drop out. The end game starts from
    one of the last few round boundaries: part of a round, a few filler
    ACTs to line up the alert, then the final row is hammered until it is
    mitigated.

    A first pass on a spaced layout finds the best end game. Its final row
    and the rows lost right before it are then relabelled into an adjacent
    block, so their mitigations also land on the final row, and a second
    pass replays the identical dynamics.
    """
    params = params or PracParams()
    timings = timings or DramTimings()
    policy = _as_policy(policy)
    if policy.queue_kind not in WAVE_POLICIES:
        raise ValueError(f"wave attack supports queue kinds {WAVE_POLICIES}")
    if not 1 <= r1 <= timings.rows_per_bank:
        raise ValueError(f"r1 must be in [1, {timings.rows_per_bank}]")
    limit = timings.t_refw if enforce_window else 0
    config = {"r1": r1, "n_bo": params.n_bo, "n_mit": params.n_mit,
              "queue_kind": policy.queue_kind, "enforce_window": enforce_window}
    cap = _record_cap(record, timings) + (2 * r1 * params.n_bo if record else 0)
    br = params.blast_radius
    stride = _stride(params)

    if r1 == 1:
        w = _Wave(policy, params, timings, np.array([br], dtype=np.int64), limit, cap)
        ok = w.setup()
        _finish(w.ch, np.zeros(0, dtype=np.int64), 0, np.zeros(0, dtype=np.int64), 0, br, limit)
        return _report("wave", w.ch, br, 0, config, not ok, rounds=1, record=record)

    n_fill = params.alert_period + 1
    fill_start = r1 + 2
    far = br + stride * (fill_start + n_fill) + br + 1
    if far + 2 * br + 1 > timings.rows_per_bank:
        return _dense_wave(policy, r1, params, timings, limit, config, record, cap)
    layout = _spaced_rows(r1, params)
    fillers = _spaced_rows(n_fill, params, start=fill_start)

    # pass 1: search the end game on the spaced layout
    w1 = _Wave(policy, params, timings, layout, limit)
    if not w1.setup():
        return _report("wave", w1.ch, int(layout[-1]), 0, config, True)
    marks, pool, done, exhausted = w1.rounds(keep=WAVE_CHECKPOINTS)
    if exhausted or not marks:
        x = int(pool[-1]) if len(pool) else int(layout[-1])
        if not exhausted:
            _finish(w1.ch, np.zeros(0, dtype=np.int64), 0, fillers, 0, x, limit)
        return _report("wave", w1.ch, x, 0, config, exhausted, rounds=done)
    plans = _search_end_game(marks, fillers, params, limit)
    best = plans[0]
    index = {int(r): i for i, r in enumerate(layout)}

    def replay(plan: _Plan, phys: np.ndarray, record_cap: int):
        w = _Wave(policy, params, timings, phys, limit, record_cap)
        w.setup()
        _, pool, _, _ = w.rounds(stop=plan.round_index)
        x = int(pool[plan.x_pos])
        _finish(w.ch, np.delete(pool, plan.x_pos), plan.prefix, fillers, plan.fill, x, limit)
        return w.ch, x

    def relabel(plan: _Plan) -> np.ndarray:
        # the final row moves to the far block, the decoys right below it
        phys = layout.copy()
        mark_pool = next(m[2] for m in marks if m[0] == plan.round_index)
        phys[index[int(mark_pool[plan.x_pos])]] = far + br
        for i, r in enumerate(reversed(plan.decoys)):
            phys[index[r]] = far + br - 1 - i
        return phys

    # pass 2: verify the most promising relabellings
    plain = max(plans, key=lambda p: p.plain)
    best, phys, got = plain, layout, plain.plain
    for plan in plans[:WAVE_VERIFY]:
        if plan.estimate <= got:
            break
        cand = relabel(plan)
        ch, x = replay(plan, cand, 0)
        if ch.max_unmitigated(0, x) > got:
            best, phys, got = plan, cand, ch.max_unmitigated(0, x)
    ch, x = replay(best, phys, cap)
    rep = _report("wave", ch, x, 0, config, False, rounds=best.round_index + 1, record=record)
    rep.variants = {"end_round": best.round_index, "final_row_pos": best.x_pos,
                    "prefix": best.prefix, "fill": best.fill,
                    "decoys": len(best.decoys) if phys is not layout else 0}
    return rep


def _dense_wave(policy, r1, params, timings, limit, config, record, cap) -> AttackReport:
    """Pools too large for the spaced layout: plain rounds, then hammer the survivor."""
    stride = max(1, timings.rows_per_bank // r1)
    layout = (np.arange(r1, dtype=np.int64) * stride).astype(np.int64)
    w = _Wave(policy, params, timings, layout, limit, cap)
    if not w.setup():
        return _report("wave", w.ch, int(layout[-1]), 0, config, True, record=record)
    _, pool, done, exhausted = w.rounds()
    x = int(pool[-1]) if len(pool) else int(layout[-1])
    if not exhausted:
        _finish(w.ch, np.zeros(0, dtype=np.int64), 0, np.zeros(0, dtype=np.int64), 0, x, limit)
    config = dict(config, layout="dense")
    return _report("wave", w.ch, x, 0, config, exhausted, rounds=done + 1, record=record)


# ------------------------------------------------------- empirical vs model

# r1 values of the default agreement grid; all fit one window at n_bo = 32
WAVE_GRID_R1 = (16, 64, 256, 1000, 2000, 5000, 10000)


@dataclass(frozen=True)
class WaveComparison:
    n_bo: int
    n_mit: int
    r1: int
    policy: str
    empirical: int
    analytical: int

    CSV_HEADER = "n_bo,n_mit,r1,policy,empirical,analytical,rel_error"

    @property
    def rel_error(self) -> float:
        return abs(self.empirical - self.analytical) / self.analytical

    def csv_row(self) -> str:
        return (f"{self.n_bo},{self.n_mit},{self.r1},{self.policy},{self.empirical},"
                f"{self.analytical},{self.rel_error:.6f}")


def compare_wave(r1: int, params: PracParams | None = None, timings: DramTimings | None = None,
                 policy: str = "psq") -> WaveComparison:
    """Run the wave attack and set it against ``n_bo + n_online(r1)``.

    The model's row reaches ``n_bo - 1`` in setup and then gains
    ``n_online`` ACTs, so the empirical side is the peak count plus one.
    """
    from .security import AnalysisConfig, n_online
    params = params or PracParams()
    timings = timings or DramTimings()
    rep = wave_attack(policy, r1, params, timings)
    model = params.n_bo + n_online(r1, AnalysisConfig(params, timings))
    return WaveComparison(params.n_bo, params.n_mit, r1, policy, rep.max_unmitigated + 1, model)
