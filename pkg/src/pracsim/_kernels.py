"""Array kernels for the PRAC bank state machine.

Everything here compiles with numba when it is available. Setting
``PRACSIM_NO_NUMBA=1`` runs the very same functions as plain Python over
numpy arrays, which is slow but useful for debugging and benchmarking.

State is spread over a handful of arrays so the kernels stay nopython
friendly. ``sim.ChannelState`` owns them and is the public face.
"""

from __future__ import annotations

import os

import numpy as np


def _numba_disabled() -> bool:
    return os.environ.get("PRACSIM_NO_NUMBA", "").strip().lower() not in ("", "0", "false", "no")


HAVE_NUMBA = False
if not _numba_disabled():
    try:
        from numba import njit
        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass

if not HAVE_NUMBA:
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn
        return wrap


# queue kinds
K_PSQ = 0
K_IDEAL = 1
K_TBIT = 2
K_FULL = 3

# proactive modes
PRO_OFF = 0
PRO_EVERY = 1
PRO_ENERGY = 2

# mitigation kinds (stats columns)
MIT_ALERT = 0
MIT_OPP = 1
MIT_PRO = 2

# pr: parameter vector
P_NBO = 0
P_NMIT = 1
P_ABO_ACT = 2
P_DELAY = 3
P_BR = 4
P_ROWS = 5
P_KIND = 6
P_OPP = 7
P_PRO = 8
P_NPRO = 9
P_M = 10
P_REFMIT = 11
P_BLOCK = 12
P_DEDUPE = 13
P_TRC = 14
P_TRFC = 15
P_TRFM = 16
P_APT = 17
P_CAP = 18
P_NBANKS = 19
P_MAXB = 20
P_AUTOREF = 21
P_RECORD = 22
NP = 23

# st: channel scalars
S_SEQ = 0
S_ALERT = 1
S_WIN = 2
S_CLOCK = 3
S_ALERTS = 4
S_RFMS = 5
S_MIT = 6          # 6, 7, 8 by mitigation kind
S_BYPASS = 9
S_ACTS = 10
S_SLOT = 11
S_REFS = 12
S_ERR = 13
S_SERVICES = 14
S_NEV = 15
S_TRUNC = 16
S_NOOP = 17
NS = 18

# bk: per-bank scalars
B_SINCE = 0
B_PENDING = 1
B_QN = 2
B_FHEAD = 3
B_TOP = 4
B_ALERTS = 5
B_MITS = 6
NB = 7

# error codes
E_OK = 0
E_ABO_WINDOW = 1
E_BUCKET = 2

# event kinds in the recorded trace
EV_ACT = 0
EV_REF = 1
EV_SERVICE = 2

BIG = 1 << 40


# ---------------------------------------------------------------- PSQ helpers

@njit(cache=True)
def _psq_find(q, bk, b, row):
    for i in range(bk[b, B_QN]):
        if q[b, i] == row:
            return i
    return -1


@njit(cache=True)
def _psq_top_slot(q, bk, cnt, upd, b):
    best = -1
    for i in range(bk[b, B_QN]):
        r = q[b, i]
        if best < 0:
            best = i
            continue
        rb = q[b, best]
        if cnt[b, r] > cnt[b, rb] or (cnt[b, r] == cnt[b, rb] and upd[b, r] < upd[b, rb]):
            best = i
    return best


@njit(cache=True)
def _psq_min_slot(q, bk, cnt, upd, b):
    worst = -1
    for i in range(bk[b, B_QN]):
        r = q[b, i]
        if worst < 0:
            worst = i
            continue
        rw = q[b, worst]
        if cnt[b, r] < cnt[b, rw] or (cnt[b, r] == cnt[b, rw] and upd[b, r] < upd[b, rw]):
            worst = i
    return worst


@njit(cache=True)
def _psq_remove_slot(q, bk, b, i):
    n = bk[b, B_QN]
    for j in range(i, n - 1):
        q[b, j] = q[b, j + 1]
    q[b, n - 1] = -1
    bk[b, B_QN] = n - 1


@njit(cache=True)
def _psq_observe(pr, q, bk, cnt, upd, b, row):
    if _psq_find(q, bk, b, row) >= 0:
        return
    n = bk[b, B_QN]
    if n < pr[P_CAP]:
        q[b, n] = row
        bk[b, B_QN] = n + 1
        return
    m = _psq_min_slot(q, bk, cnt, upd, b)
    if cnt[b, row] > cnt[b, q[b, m]]:
        # slot order carries no meaning, so replace in place
        q[b, m] = row


# --------------------------------------------------------------- FIFO helpers

@njit(cache=True)
def _fifo_find(pr, q, bk, b, row):
    cap = pr[P_CAP]
    h = bk[b, B_FHEAD]
    for i in range(bk[b, B_QN]):
        if q[b, (h + i) % cap] == row:
            return i
    return -1


@njit(cache=True)
def _fifo_offer(pr, st, q, bk, b, row):
    if pr[P_DEDUPE] != 0 and _fifo_find(pr, q, bk, b, row) >= 0:
        return True
    cap = pr[P_CAP]
    n = bk[b, B_QN]
    if n >= cap:
        st[S_BYPASS] += 1
        return False
    q[b, (bk[b, B_FHEAD] + n) % cap] = row
    bk[b, B_QN] = n + 1
    return True


@njit(cache=True)
def _fifo_pop(pr, q, bk, b):
    if bk[b, B_QN] == 0:
        return -1
    cap = pr[P_CAP]
    h = bk[b, B_FHEAD]
    row = q[b, h]
    q[b, h] = -1
    bk[b, B_FHEAD] = (h + 1) % cap
    bk[b, B_QN] -= 1
    return row


@njit(cache=True)
def _fifo_remove(pr, q, bk, b, row):
    i = _fifo_find(pr, q, bk, b, row)
    if i < 0:
        return
    cap = pr[P_CAP]
    h = bk[b, B_FHEAD]
    n = bk[b, B_QN]
    for j in range(i, n - 1):
        q[b, (h + j) % cap] = q[b, (h + j + 1) % cap]
    q[b, (h + n - 1) % cap] = -1
    bk[b, B_QN] = n - 1


# ------------------------------------------------------ ideal top-N buckets
# One FIFO list per count value. Appending on every increment keeps each
# list ordered by last update, so the head of the highest bucket is the
# staler of the most activated rows.

@njit(cache=True)
def _bucket_unlink(bk, head, tail, nxt, prv, b, row, c):
    p = prv[b, row]
    n = nxt[b, row]
    if p >= 0:
        nxt[b, p] = n
    else:
        head[b, c] = n
    if n >= 0:
        prv[b, n] = p
    else:
        tail[b, c] = p
    nxt[b, row] = -1
    prv[b, row] = -1
    while bk[b, B_TOP] > 0 and head[b, bk[b, B_TOP]] < 0:
        bk[b, B_TOP] -= 1


@njit(cache=True)
def _bucket_append(bk, head, tail, nxt, prv, b, row, c):
    t = tail[b, c]
    prv[b, row] = t
    nxt[b, row] = -1
    if t >= 0:
        nxt[b, t] = row
    else:
        head[b, c] = row
    tail[b, c] = row
    if c > bk[b, B_TOP]:
        bk[b, B_TOP] = c


# ------------------------------------------------------------ core kernels

@njit(cache=True)
def _record(pr, st, ev, kind, b, row):
    if pr[P_RECORD] == 0:
        return
    n = st[S_NEV]
    if n >= ev.shape[0]:
        st[S_TRUNC] = 1
        return
    ev[n, 0] = kind
    ev[n, 1] = b
    ev[n, 2] = row
    st[S_NEV] = n + 1


@njit(cache=True)
def _top_row(pr, q, bk, cnt, upd, head, b):
    kind = pr[P_KIND]
    if kind == K_PSQ:
        i = _psq_top_slot(q, bk, cnt, upd, b)
        if i < 0:
            return -1
        return q[b, i]
    if kind == K_IDEAL:
        t = bk[b, B_TOP]
        if t <= 0:
            return -1
        return head[b, t]
    if bk[b, B_QN] == 0:
        return -1
    return q[b, bk[b, B_FHEAD]]


@njit(cache=True)
def _bump(pr, st, cnt, upd, maxc, q, bk, head, tail, nxt, prv, b, row, abo):
    """Increment one counter and let the queue observe it."""
    old = cnt[b, row]
    new = old + 1
    kind = pr[P_KIND]
    if kind == K_IDEAL:
        if new >= pr[P_MAXB]:
            st[S_ERR] = E_BUCKET
            return
        if old > 0:
            _bucket_unlink(bk, head, tail, nxt, prv, b, row, old)
    cnt[b, row] = new
    st[S_SEQ] += 1
    upd[b, row] = st[S_SEQ]
    if new > maxc[b, row]:
        maxc[b, row] = new
    if kind == K_PSQ:
        _psq_observe(pr, q, bk, cnt, upd, b, row)
    elif kind == K_IDEAL:
        _bucket_append(bk, head, tail, nxt, prv, b, row, new)
    elif kind == K_TBIT:
        if new % pr[P_M] == 0 and not (abo and pr[P_BLOCK] != 0):
            _fifo_offer(pr, st, q, bk, b, row)
    else:
        if new >= pr[P_M]:
            _fifo_offer(pr, st, q, bk, b, row)


@njit(cache=True)
def _check_alert(pr, st, q, bk, cnt, upd, head, b):
    if bk[b, B_PENDING] != 0 or bk[b, B_SINCE] < pr[P_DELAY]:
        return
    kind = pr[P_KIND]
    fire = False
    if kind == K_PSQ or kind == K_IDEAL:
        top = _top_row(pr, q, bk, cnt, upd, head, b)
        fire = top >= 0 and cnt[b, top] >= pr[P_NBO]
    else:
        fire = bk[b, B_QN] >= pr[P_CAP]
    if fire:
        bk[b, B_PENDING] = 1
        bk[b, B_ALERTS] += 1
        if st[S_ALERT] == 0:
            st[S_ALERT] = 1
            st[S_WIN] = 0
            st[S_ALERTS] += 1


@njit(cache=True)
def k_activate(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, b, row):
    """One ACT. Returns an error code; the state is untouched on error."""
    abo = False
    if st[S_ALERT] != 0:
        if st[S_WIN] >= pr[P_ABO_ACT]:
            st[S_ERR] = E_ABO_WINDOW
            return E_ABO_WINDOW
        st[S_WIN] += 1
        abo = True
    _record(pr, st, ev, EV_ACT, b, row)
    _bump(pr, st, cnt, upd, maxc, q, bk, head, tail, nxt, prv, b, row, abo)
    bk[b, B_SINCE] += 1
    st[S_ACTS] += 1
    st[S_CLOCK] += pr[P_TRC]
    _check_alert(pr, st, q, bk, cnt, upd, head, b)
    return st[S_ERR]


@njit(cache=True)
def _mitigate(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, b, row, kind):
    qk = pr[P_KIND]
    if qk == K_PSQ:
        i = _psq_find(q, bk, b, row)
        if i >= 0:
            _psq_remove_slot(q, bk, b, i)
    elif qk == K_IDEAL:
        if cnt[b, row] > 0:
            _bucket_unlink(bk, head, tail, nxt, prv, b, row, cnt[b, row])
    else:
        _fifo_remove(pr, q, bk, b, row)
    cnt[b, row] = 0
    mitn[b, row] += 1
    bk[b, B_MITS] += 1
    st[S_MIT + kind] += 1
    rows = pr[P_ROWS]
    for d in range(1, pr[P_BR] + 1):
        v = row - d
        if v >= 0:
            _bump(pr, st, cnt, upd, maxc, q, bk, head, tail, nxt, prv, b, v, False)
        v = row + d
        if v < rows:
            _bump(pr, st, cnt, upd, maxc, q, bk, head, tail, nxt, prv, b, v, False)


@njit(cache=True)
def _pop_and_mitigate(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, b, kind, min_count):
    qk = pr[P_KIND]
    if qk == K_TBIT or qk == K_FULL:
        row = _fifo_pop(pr, q, bk, b)
    else:
        row = _top_row(pr, q, bk, cnt, upd, head, b)
    if row < 0:
        return -1
    if cnt[b, row] < min_count:
        return -1
    _mitigate(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, b, row, kind)
    return row


@njit(cache=True)
def k_service(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev):
    """All-bank RFM burst for the pending alert. Returns False if none was pending."""
    if st[S_ALERT] == 0:
        st[S_NOOP] += 1
        return False
    _record(pr, st, ev, EV_SERVICE, -1, -1)
    nb = pr[P_NBANKS]
    for _ in range(pr[P_NMIT]):
        for b in range(nb):
            if bk[b, B_PENDING] != 0:
                _pop_and_mitigate(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv,
                                  b, MIT_ALERT, 0)
            elif pr[P_OPP] != 0:
                _pop_and_mitigate(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv,
                                  b, MIT_OPP, 0)
    for b in range(nb):
        if bk[b, B_PENDING] != 0:
            bk[b, B_PENDING] = 0
            bk[b, B_SINCE] = 0
    st[S_ALERT] = 0
    st[S_WIN] = 0
    st[S_RFMS] += pr[P_NMIT]
    st[S_SERVICES] += 1
    st[S_CLOCK] += pr[P_NMIT] * pr[P_TRFM]
    return True


@njit(cache=True)
def k_refresh(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev):
    _record(pr, st, ev, EV_REF, -1, -1)
    st[S_CLOCK] += pr[P_TRFC]
    st[S_REFS] += 1
    st[S_SLOT] = 0
    qk = pr[P_KIND]
    for b in range(pr[P_NBANKS]):
        if qk == K_TBIT or qk == K_FULL:
            if pr[P_REFMIT] != 0:
                _pop_and_mitigate(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv,
                                  b, MIT_PRO, 0)
        elif pr[P_PRO] == PRO_EVERY:
            _pop_and_mitigate(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv,
                              b, MIT_PRO, 0)
        elif pr[P_PRO] == PRO_ENERGY:
            _pop_and_mitigate(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv,
                              b, MIT_PRO, pr[P_NPRO])


@njit(cache=True)
def k_service_due(pr, st):
    return st[S_ALERT] != 0 and st[S_WIN] >= pr[P_ABO_ACT]


@njit(cache=True)
def k_step(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, b, row):
    """Controller step: service if the ABO window is used up, ACT, then REF on cadence."""
    if st[S_ALERT] != 0 and st[S_WIN] >= pr[P_ABO_ACT]:
        k_service(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev)
    err = k_activate(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, b, row)
    if err != E_OK:
        return err
    if pr[P_AUTOREF] != 0:
        st[S_SLOT] += 1
        if st[S_SLOT] >= pr[P_APT]:
            k_refresh(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev)
    return st[S_ERR]


@njit(cache=True)
def k_run(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, ops, clock_limit):
    """Replay an op array of (kind, bank, row) rows through the controller.

    Returns the index of the first op not executed (len(ops) when all ran).
    """
    for i in range(ops.shape[0]):
        if clock_limit > 0 and st[S_CLOCK] >= clock_limit:
            return i
        kind = ops[i, 0]
        if kind == EV_ACT:
            if k_step(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev,
                      ops[i, 1], ops[i, 2]) != E_OK:
                return i
        elif kind == EV_REF:
            k_refresh(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev)
        else:
            k_service(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev)
    return ops.shape[0]


@njit(cache=True)
def k_hammer(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev,
             rows, reps, clock_limit):
    """Round-robin ``reps`` passes over ``rows`` on bank 0. Returns passes completed."""
    for rep in range(reps):
        for i in range(rows.shape[0]):
            if clock_limit > 0 and st[S_CLOCK] >= clock_limit:
                return rep
            if k_step(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev,
                      0, rows[i]) != E_OK:
                return rep
    return reps


@njit(cache=True)
def k_wave_round(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev,
                 pool, npool, clock_limit):
    """One wave round on bank 0: one ACT per surviving row, then drop mitigated rows.

    Returns the new pool size, or -1 if the clock limit cut the round short.
    """
    for i in range(npool):
        r = pool[i]
        if mitn[0, r] != 0:
            continue
        if clock_limit > 0 and st[S_CLOCK] >= clock_limit:
            return -1
        if k_step(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, 0, r) != E_OK:
            return -1
    k = 0
    for i in range(npool):
        r = pool[i]
        if mitn[0, r] == 0:
            pool[k] = r
            k += 1
    return k


@njit(cache=True)
def _service_if_due(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev):
    if st[S_ALERT] != 0 and st[S_WIN] >= pr[P_ABO_ACT]:
        k_service(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev)


@njit(cache=True)
def k_wave_finish(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev,
                  others, j, fillers, f, x, lost, clock_limit):
    """Wave end game on bank 0: part of a round, some filler ACTs, then hammer ``x``.

    ACTs the first ``j`` rows of ``others`` that are still unmitigated, then
    ``f`` fresh filler rows, then ``x`` until it is mitigated. Rows of
    ``others`` mitigated by the services of the hammering phase that spare ``x`` are written
    to ``lost`` in order. Returns ``(max count of x, rows written to lost)``.
    """
    nl = 0
    for i in range(j + f):
        _service_if_due(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev)
        if mitn[0, x] != 0 or (clock_limit > 0 and st[S_CLOCK] >= clock_limit):
            return maxc[0, x], nl
        if i < j:
            r = others[i]
            if mitn[0, r] != 0:
                continue
        else:
            r = fillers[i - j]
        k_step(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, 0, r)
    gone = np.zeros(others.shape[0], dtype=np.bool_)
    for i in range(others.shape[0]):
        gone[i] = mitn[0, others[i]] != 0
    while mitn[0, x] == 0:
        if clock_limit > 0 and st[S_CLOCK] >= clock_limit:
            break
        if st[S_ALERT] != 0 and st[S_WIN] >= pr[P_ABO_ACT]:
            k_service(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev)
            if mitn[0, x] != 0:
                break  # rows lost alongside x no longer help it
            for i in range(others.shape[0]):
                if not gone[i] and mitn[0, others[i]] != 0:
                    gone[i] = True
                    lost[nl] = others[i]
                    nl += 1
        elif k_step(pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev, 0, x) != E_OK:
            break
    return maxc[0, x], nl


def new_arrays(pr: np.ndarray, n_banks: int, rows: int, record_cap: int = 0):
    """Allocate a zeroed state for the given parameter vector."""
    cap = int(pr[P_CAP])
    st = np.zeros(NS, dtype=np.int64)
    cnt = np.zeros((n_banks, rows), dtype=np.int32)
    upd = np.zeros((n_banks, rows), dtype=np.int64)
    maxc = np.zeros((n_banks, rows), dtype=np.int32)
    mitn = np.zeros((n_banks, rows), dtype=np.int32)
    q = np.full((n_banks, cap), -1, dtype=np.int64)
    bk = np.zeros((n_banks, NB), dtype=np.int64)
    # no suppression before the first service
    bk[:, B_SINCE] = BIG
    if pr[P_KIND] == K_IDEAL:
        maxb = int(pr[P_MAXB])
        head = np.full((n_banks, maxb), -1, dtype=np.int32)
        tail = np.full((n_banks, maxb), -1, dtype=np.int32)
        nxt = np.full((n_banks, rows), -1, dtype=np.int32)
        prv = np.full((n_banks, rows), -1, dtype=np.int32)
    else:
        head = np.full((1, 1), -1, dtype=np.int32)
        tail = np.full((1, 1), -1, dtype=np.int32)
        nxt = np.full((1, 1), -1, dtype=np.int32)
        prv = np.full((1, 1), -1, dtype=np.int32)
    ev = np.zeros((max(record_cap, 1), 3), dtype=np.int64)
    return [pr, st, cnt, upd, maxc, mitn, q, bk, head, tail, nxt, prv, ev]
