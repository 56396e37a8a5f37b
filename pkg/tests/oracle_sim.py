"""Slow reference model of the bank simulator, written from the protocol rules.

Sparse dicts instead of arrays and a global scan instead of count buckets,
so it shares no code with the kernels. Differential tests drive both with
the same op stream and compare the resulting stats.
"""

from __future__ import annotations

from collections import deque

from pracsim.params import DramTimings, PracParams, acts_per_trefi
from pracsim.sim import MitigationPolicy

BIG = 1 << 40


class OracleChannel:
    def __init__(self, params: PracParams, timings: DramTimings, policy: MitigationPolicy,
                 n_banks: int, auto_refresh: bool = True):
        self.p, self.t, self.pol = params, timings, policy
        self.n_banks = n_banks
        self.auto_refresh = auto_refresh
        self.m = policy.mitigation_threshold
        self.n_pro = policy.resolved_n_pro(params)
        self.apt = max(1, acts_per_trefi(timings))
        self.cnt: dict[tuple[int, int], int] = {}
        self.upd: dict[tuple[int, int], int] = {}
        self.peak: dict[tuple[int, int], int] = {}
        self.queue = [deque() if policy.is_fifo else [] for _ in range(n_banks)]
        self.since = [BIG] * n_banks
        self.pending = [False] * n_banks
        self.seq = 0
        self.alert = False
        self.win = 0
        self.slot = 0
        self.stats = {"alerts": 0, "rfms_issued": 0, "timeline_ns": 0, "activations": 0,
                      "refreshes": 0, "bypasses": 0, "noop_services": 0,
                      "alert": 0, "opportunistic": 0, "proactive": 0}
        self.error = False

    # -- queues ----------------------------------------------------------
    def _key(self, b: int, r: int) -> tuple[int, int]:
        # higher count first, then the staler row
        return (-self.cnt.get((b, r), 0), self.upd.get((b, r), 0))

    def _top(self, b: int) -> int | None:
        kind = self.pol.queue_kind
        if kind == "psq":
            rows = self.queue[b]
        elif kind == "ideal":
            rows = [r for (bb, r), c in self.cnt.items() if bb == b and c > 0]
        else:
            return self.queue[b][0] if self.queue[b] else None
        return min(rows, key=lambda r: self._key(b, r)) if rows else None

    def _observe(self, b: int, r: int, abo: bool) -> None:
        kind, q, c = self.pol.queue_kind, self.queue[b], self.cnt[(b, r)]
        if kind == "psq":
            if r in q:
                return
            if len(q) < self.pol.queue_capacity:
                q.append(r)
                return
            low = min(q, key=lambda x: (self.cnt[(b, x)], self.upd[(b, x)]))
            if c > self.cnt[(b, low)]:
                q[q.index(low)] = r
        elif kind == "fifo_tbit":
            if c % self.m == 0 and not (abo and self.pol.block_abo_toggle):
                self._offer(b, r)
        elif kind == "fifo_fullcount":
            if c >= self.m:
                self._offer(b, r)

    def _offer(self, b: int, r: int) -> None:
        q = self.queue[b]
        if self.pol.fifo_dedupe and r in q:
            return
        if len(q) >= self.pol.queue_capacity:
            self.stats["bypasses"] += 1
            return
        q.append(r)

    # -- counters --------------------------------------------------------
    def _bump(self, b: int, r: int, abo: bool) -> None:
        c = self.cnt.get((b, r), 0) + 1
        self.cnt[(b, r)] = c
        self.seq += 1
        self.upd[(b, r)] = self.seq
        self.peak[(b, r)] = max(self.peak.get((b, r), 0), c)
        self._observe(b, r, abo)

    def _mitigate(self, b: int, r: int, kind: str) -> None:
        q = self.queue[b]
        if r in q:
            q.remove(r)
        self.cnt[(b, r)] = 0
        self.stats[kind] += 1
        for d in range(1, self.p.blast_radius + 1):
            if r - d >= 0:
                self._bump(b, r - d, False)
            if r + d < self.t.rows_per_bank:
                self._bump(b, r + d, False)

    def _pop_and_mitigate(self, b: int, kind: str, min_count: int = 0) -> None:
        if self.pol.is_fifo:
            row = self.queue[b].popleft() if self.queue[b] else None
        else:
            row = self._top(b)
        if row is None or self.cnt.get((b, row), 0) < min_count:
            return
        self._mitigate(b, row, kind)

    # -- protocol --------------------------------------------------------
    def _check_alert(self, b: int) -> None:
        if self.pending[b] or self.since[b] < self.p.abo_delay:
            return
        if self.pol.is_fifo:
            fire = len(self.queue[b]) >= self.pol.queue_capacity
        else:
            top = self._top(b)
            fire = top is not None and self.cnt[(b, top)] >= self.p.n_bo
        if fire:
            self.pending[b] = True
            if not self.alert:
                self.alert = True
                self.win = 0
                self.stats["alerts"] += 1

    def activate(self, b: int, r: int) -> bool:
        abo = False
        if self.alert:
            if self.win >= self.p.abo_act:
                self.error = True
                return False
            self.win += 1
            abo = True
        self._bump(b, r, abo)
        self.since[b] += 1
        self.stats["activations"] += 1
        self.stats["timeline_ns"] += self.t.t_rc
        self._check_alert(b)
        return True

    def service(self) -> None:
        if not self.alert:
            self.stats["noop_services"] += 1
            return
        for _ in range(self.p.n_mit):
            for b in range(self.n_banks):
                if self.pending[b]:
                    self._pop_and_mitigate(b, "alert")
                elif self.pol.opportunistic:
                    self._pop_and_mitigate(b, "opportunistic")
        for b in range(self.n_banks):
            if self.pending[b]:
                self.pending[b] = False
                self.since[b] = 0
        self.alert = False
        self.win = 0
        self.stats["rfms_issued"] += self.p.n_mit
        self.stats["timeline_ns"] += self.p.n_mit * self.t.t_rfm_ab

    def refresh(self) -> None:
        self.stats["timeline_ns"] += self.t.t_rfc
        self.stats["refreshes"] += 1
        self.slot = 0
        for b in range(self.n_banks):
            if self.pol.is_fifo:
                if self.pol.fifo_ref_mitigation:
                    self._pop_and_mitigate(b, "proactive")
            elif self.pol.proactive == "every_ref":
                self._pop_and_mitigate(b, "proactive")
            elif self.pol.proactive == "energy_aware":
                self._pop_and_mitigate(b, "proactive", self.n_pro)

    def step(self, b: int, r: int) -> bool:
        if self.alert and self.win >= self.p.abo_act:
            self.service()
        if not self.activate(b, r):
            return False
        if self.auto_refresh:
            self.slot += 1
            if self.slot >= self.apt:
                self.refresh()
        return True

    def run(self, ops) -> None:
        for op in ops:
            if op[0] == "ACT":
                if not self.step(op[1], op[2]):
                    return
            elif op[0] == "REF":
                self.refresh()
            else:
                self.service()

    def summary(self) -> dict:
        s = dict(self.stats)
        s["mitigations_by_kind"] = {k: s.pop(k) for k in ("alert", "opportunistic", "proactive")}
        s["max_unmitigated"] = {k: v for k, v in self.peak.items() if v}
        return s
