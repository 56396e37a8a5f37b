"""Attack drivers that run inside the kernel loop.

The FIFO attacks issue hundreds of thousands of ACTs per refresh window
(millions for the 32-bank variant), so their schedulers live next to the
state machine and compile with it. All of them return early once the
clock reaches ``clock_limit``.
"""

from __future__ import annotations

import numpy as np

from ._kernels import (
    B_QN, E_OK, P_ABO_ACT, P_APT, P_AUTOREF, P_CAP, P_M, P_NBANKS, P_TRC, S_ALERT, S_CLOCK,
    S_ACTS, S_REFS, S_SLOT, S_WIN, _fifo_find, k_activate, k_refresh, k_service, k_step, njit,
)


@njit(cache=True)
def _fifo_full(pr, bk, b):
    return bk[b, B_QN] >= pr[P_CAP]


@njit(cache=True)
def _abo_hammer(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev,
                tb, target, spare, nspare, budget):
    """Spend up to ``budget`` ABO ACTs on the target while its bank's queue is full.

    If a REF drained the queue in between, a spare row already at the
    threshold refills it first so the target never lands in the queue.
    Returns ACTs given to the target.
    """
    got = 0
    for _ in range(budget):
        if st[S_ALERT] == 0 or st[S_WIN] >= pr[P_ABO_ACT]:
            break
        if _fifo_full(pr, bk, tb):
            if k_step(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev,
                      tb, target) != E_OK:
                break
            got += 1
        else:
            done = False
            for i in range(nspare):
                r = spare[i]
                if cnt[tb, r] >= pr[P_M] - 1 and _fifo_find(pr, q, bk, tb, r) < 0:
                    k_step(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, tb, r)
                    done = True
                    break
            if not done:
                break
    return got


@njit(cache=True)
def _poke(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, b, pool):
    """ACT a pool row that cannot join the queue: a queued one, else the coldest."""
    pick = -1
    for i in range(pool.shape[0]):
        r = pool[i]
        if _fifo_find(pr, q, bk, b, r) >= 0:
            pick = r
            break
        if pick < 0 or cnt[b, r] < cnt[b, pick]:
            pick = r
    k_step(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, b, pick)


@njit(cache=True)
def k_toggle_forget(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev,
                    fill, target, abo_target, clock_limit):
    """Lockstep t-bit attack on bank 0. Returns completed bypass cycles.

    Every period each row is brought to one ACT short of its next toggle,
    then the fill rows toggle (queued rows first) until the queue is full and
    the alert fires. The target spends the ABO window toggling into the full
    queue, so it is dropped, and then catches up with the others.
    """
    m = pr[P_M]
    nfill = fill.shape[0]
    cycles = 0
    last = -1
    while True:
        if st[S_ACTS] == last:
            return cycles  # no row could make progress
        last = st[S_ACTS]
        # catch up: every row to phase m - 1, round robin
        busy = True
        while busy:
            busy = False
            for i in range(nfill + 1):
                r = target if i == nfill else fill[i]
                if cnt[0, r] % m != m - 1:
                    if clock_limit > 0 and st[S_CLOCK] >= clock_limit:
                        return cycles
                    k_step(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, 0, r)
                    busy = True
        # toggle the fill rows, those already queued first
        for rnd in range(2):
            pass_queued = rnd == 0
            for i in range(nfill):
                if st[S_ALERT] != 0:
                    break
                r = fill[i]
                queued = _fifo_find(pr, q, bk, 0, r) >= 0
                if queued != pass_queued or cnt[0, r] % m != m - 1:
                    continue
                if clock_limit > 0 and st[S_CLOCK] >= clock_limit:
                    return cycles
                k_step(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, 0, r)
        if st[S_ALERT] == 0:
            # a REF drained the queue mid-period; start the period over
            continue
        # a toggle-based queue cannot be refilled mid-window, so no spares
        got = _abo_hammer(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev,
                          0, target, fill, 0, abo_target)
        k_service(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev)
        if got > 0:
            cycles += 1


@njit(cache=True)
def k_fill_escape(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev,
                  pool, target, clock_limit):
    """Full-count FIFO attack on bank 0. Returns completed escape cycles.

    The target sits one ACT below the threshold and is only activated inside
    ABO windows while the queue is full. Between alerts, pool rows that are
    not queued are raised to ``m - 1`` and then pushed in one ACT each.
    """
    m = pr[P_M]
    cap = pr[P_CAP]
    npool = pool.shape[0]
    while cnt[0, target] < m - 1:
        if clock_limit > 0 and st[S_CLOCK] >= clock_limit:
            return 0
        k_step(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, 0, target)
    cycles = 0
    last = -1
    while True:
        if st[S_ACTS] == last:
            return cycles  # pool too small to fill the queue
        last = st[S_ACTS]
        # raise enough unqueued rows to m - 1
        while True:
            need = cap - bk[0, B_QN]
            ready = 0
            best = -1
            for i in range(npool):
                r = pool[i]
                if _fifo_find(pr, q, bk, 0, r) >= 0:
                    continue
                if cnt[0, r] >= m - 1:
                    ready += 1
                elif best < 0 or cnt[0, r] > cnt[0, pool[best]]:
                    best = i
            if ready >= need or best < 0:
                break
            if clock_limit > 0 and st[S_CLOCK] >= clock_limit:
                return cycles
            k_step(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, 0, pool[best])
        # push them in until the queue is full and the alert fires
        for i in range(npool):
            if st[S_ALERT] != 0:
                break
            r = pool[i]
            if cnt[0, r] < m - 1 or _fifo_find(pr, q, bk, 0, r) >= 0:
                continue
            if clock_limit > 0 and st[S_CLOCK] >= clock_limit:
                return cycles
            k_step(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, 0, r)
        if st[S_ALERT] == 0 and _fifo_full(pr, bk, 0):
            # victims filled the queue during a service; one ACT lets the alert fire
            _poke(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, 0, pool)
        if st[S_ALERT] == 0:
            continue
        got = _abo_hammer(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev,
                          0, target, pool, npool, pr[P_ABO_ACT])
        k_service(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev)
        if got > 0:
            cycles += 1


@njit(cache=True)
def _batch_tick(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, acts):
    # ACTs to distinct banks overlap: one t_rc per batch, one REF slot per batch
    if acts > 1:
        st[S_CLOCK] -= (acts - 1) * pr[P_TRC]
    if acts > 0 and pr[P_AUTOREF] != 0:
        st[S_SLOT] += 1
        if st[S_SLOT] >= pr[P_APT]:
            k_refresh(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev)


@njit(cache=True)
def _pick_warm(pr, q, bk, cnt, b, pool):
    """Unqueued pool row closest to m - 1, or -1 once enough rows are ready."""
    m = pr[P_M]
    need = pr[P_CAP] - bk[b, B_QN]
    ready = 0
    best = -1
    for i in range(pool.shape[0]):
        r = pool[i]
        if _fifo_find(pr, q, bk, b, r) >= 0:
            continue
        c = cnt[b, r] % m
        if c == m - 1:
            ready += 1
        elif best < 0 or c > cnt[b, best] % m:
            best = r
    if ready >= need:
        return -1
    return best


@njit(cache=True)
def k_blocked_tbit(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev,
                   pool, target, clock_limit):
    """32-bank variant against a t-bit FIFO whose ABO ACTs never toggle.

    Phase A warms unqueued pool rows to ``m - 1`` in every bank in parallel.
    Phase B walks the banks: push rows until the queue is full, then the
    ABO window goes to the target in bank 0. Returns alerts exploited.
    """
    m = pr[P_M]
    nb = pr[P_NBANKS]
    npool = pool.shape[0]
    cur = np.full(nb, -1, dtype=np.int64)
    cycles = 0
    last = -1
    while True:
        if st[S_ACTS] == last:
            return cycles  # pool too small to fill any queue
        last = st[S_ACTS]
        # phase A: parallel warm-up; bank 0 also warms the target
        for b in range(nb):
            cur[b] = _pick_warm(pr, q, bk, cnt, b, pool)
        while True:
            refs = st[S_REFS]
            acts = 0
            for b in range(nb):
                if b == 0 and cnt[0, target] < m - 1:
                    k_activate(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev,
                               0, target)
                    acts += 1
                    continue
                r = cur[b]
                if r >= 0 and cnt[b, r] % m == m - 1:
                    r = _pick_warm(pr, q, bk, cnt, b, pool)
                    cur[b] = r
                if r >= 0:
                    k_activate(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev,
                               b, r)
                    acts += 1
            _batch_tick(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, acts)
            if st[S_REFS] != refs:
                # a REF may have drained queues: replan every bank
                for b in range(nb):
                    cur[b] = _pick_warm(pr, q, bk, cnt, b, pool)
                    if cur[b] >= 0:
                        acts += 1
            if acts == 0:
                break
            if clock_limit > 0 and st[S_CLOCK] >= clock_limit:
                return cycles
        # phase B: serial pushes bank by bank
        for b in range(nb):
            for i in range(npool):
                if st[S_ALERT] != 0:
                    break
                r = pool[i]
                if cnt[b, r] % m != m - 1 or _fifo_find(pr, q, bk, b, r) >= 0:
                    continue
                if clock_limit > 0 and st[S_CLOCK] >= clock_limit:
                    return cycles
                k_step(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, b, r)
            if st[S_ALERT] == 0 and _fifo_full(pr, bk, b):
                _poke(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, b, pool)
            if st[S_ALERT] == 0:
                continue
            got = 0
            while st[S_WIN] < pr[P_ABO_ACT]:
                if k_step(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev,
                          0, target) != E_OK:
                    break
                got += 1
            k_service(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev)
            if got > 0:
                cycles += 1
