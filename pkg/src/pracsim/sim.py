"""Bank-level PRAC simulator: counters, service queues and the ABO protocol.

``ChannelState`` holds the arrays the kernels in ``_kernels`` operate on and
exposes the controller-facing operations: ``activate``, ``service_alert``,
``refresh_tick`` and ``run_pattern``. Traces are line oriented::

    ACT <bank> <row>
    REF
    SERVICE
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import _kernels as K
from .params import DramTimings, PracParams, acts_per_trefi

QUEUE_KINDS = ("psq", "ideal", "fifo_tbit", "fifo_fullcount")
PROACTIVE_MODES = ("off", "every_ref", "energy_aware")
_KIND_CODE = {"psq": K.K_PSQ, "ideal": K.K_IDEAL, "fifo_tbit": K.K_TBIT, "fifo_fullcount": K.K_FULL}
_PRO_CODE = {"off": K.PRO_OFF, "every_ref": K.PRO_EVERY, "energy_aware": K.PRO_ENERGY}

# headroom above n_bo for the ideal reference's count buckets
IDEAL_BUCKET_HEADROOM = 4096


class ControllerError(RuntimeError):
    """The caller broke the memory-controller contract (too many ABO ACTs)."""


class PatternError(ValueError):
    """A pattern step is malformed or out of range."""

    def __init__(self, msg: str, step: int | None = None):
        self.step = step
        super().__init__(msg if step is None else f"step {step}: {msg}")


@dataclass(frozen=True)
class MitigationPolicy:
    """Which service queue a bank uses and when it mitigates.

    ``queue_kind``: ``psq`` (priority queue), ``ideal`` (global top-N over all
    counters, a reference), ``fifo_tbit`` (offer on toggle of bit ``tbit``) or
    ``fifo_fullcount`` (offer while count >= threshold).
    """

    queue_kind: str = "psq"
    opportunistic: bool = True
    proactive: str = "off"
    n_pro: int | None = None
    tbit: int = 5
    threshold: int | None = None
    queue_capacity: int = 5
    fifo_ref_mitigation: bool = True
    block_abo_toggle: bool = False
    fifo_dedupe: bool = True

    def __post_init__(self) -> None:
        if self.queue_kind not in QUEUE_KINDS:
            raise ValueError(f"queue_kind must be one of {QUEUE_KINDS}")
        if self.proactive not in PROACTIVE_MODES:
            raise ValueError(f"proactive must be one of {PROACTIVE_MODES}")
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        if self.tbit < 0:
            raise ValueError("tbit must be >= 0")
        if self.threshold is not None and self.threshold < 1:
            raise ValueError("threshold must be >= 1")
        if self.n_pro is not None and self.n_pro < 1:
            raise ValueError("n_pro must be >= 1")

    @property
    def is_fifo(self) -> bool:
        return self.queue_kind in ("fifo_tbit", "fifo_fullcount")

    @property
    def mitigation_threshold(self) -> int:
        """M: 2**tbit unless an explicit threshold is set."""
        return self.threshold if self.threshold is not None else 1 << self.tbit

    def resolved_n_pro(self, params: PracParams) -> int:
        return self.n_pro if self.n_pro is not None else max(1, params.n_bo // 2)

    def validate(self, params: PracParams) -> None:
        if self.queue_kind == "psq":
            need = params.n_mit + (1 if self.proactive != "off" else 0)
            if self.queue_capacity < need:
                raise ValueError(f"PSQ capacity {self.queue_capacity} < {need} required")


QPRAC = MitigationPolicy()
QPRAC_NOOP = MitigationPolicy(opportunistic=False)
QPRAC_PROACTIVE = MitigationPolicy(proactive="every_ref")
QPRAC_PROACTIVE_EA = MitigationPolicy(proactive="energy_aware")
IDEAL = MitigationPolicy(queue_kind="ideal")


@dataclass
class SimStats:
    alerts: int = 0
    rfms_issued: int = 0
    mitigations_by_kind: dict = field(default_factory=lambda: {"alert": 0, "opportunistic": 0, "proactive": 0})
    max_unmitigated: dict = field(default_factory=dict)
    timeline_ns: int = 0
    activations: int = 0
    refreshes: int = 0
    bypasses: int = 0
    noop_services: int = 0

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["max_unmitigated"] = {f"{b}:{r}": v for (b, r), v in sorted(self.max_unmitigated.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json_dict(cls, d: dict) -> "SimStats":
        d = dict(d)
        mu = {}
        for key, v in d.pop("max_unmitigated", {}).items():
            b, r = key.split(":")
            mu[(int(b), int(r))] = int(v)
        return cls(max_unmitigated=mu, **d)

    @property
    def peak(self) -> int:
        return max(self.max_unmitigated.values(), default=0)


class BankView:
    """Read-only view of one bank inside a channel."""

    def __init__(self, channel: "ChannelState", idx: int):
        self._ch = channel
        self.idx = idx

    @property
    def counters(self) -> dict[int, int]:
        row = self._ch._a[2][self.idx]
        nz = np.flatnonzero(row)
        return {int(r): int(row[r]) for r in nz}

    def counter(self, row: int) -> int:
        return int(self._ch._a[2][self.idx, row])

    @property
    def alert_pending(self) -> bool:
        return bool(self._ch._a[7][self.idx, K.B_PENDING])

    @property
    def acts_since_alert_service(self) -> int:
        v = int(self._ch._a[7][self.idx, K.B_SINCE])
        return v if v < K.BIG // 2 else -1

    @property
    def alerts(self) -> int:
        return int(self._ch._a[7][self.idx, K.B_ALERTS])

    @property
    def mitigations(self) -> int:
        return int(self._ch._a[7][self.idx, K.B_MITS])

    def queue_rows(self) -> list[int]:
        """Queued rows in service order (head first)."""
        return self._ch.queue_rows(self.idx)

    def mitigation_count(self, row: int) -> int:
        return int(self._ch._a[5][self.idx, row])


class ChannelState:
    """All banks of one channel plus the shared ABO state.

    ``n_banks`` defaults to ``timings.banks_per_channel``; single-bank attacks
    pass 1 since idle banks never change the outcome.
    """

    def __init__(self, params: PracParams, timings: DramTimings, policy: MitigationPolicy = QPRAC,
                 n_banks: int | None = None, auto_refresh: bool = True, record_cap: int = 0):
        policy.validate(params)
        self.params = params
        self.timings = timings
        self.policy = policy
        self.n_banks = n_banks if n_banks is not None else timings.banks_per_channel
        if self.n_banks < 1:
            raise ValueError("n_banks must be >= 1")
        pr = np.zeros(K.NP, dtype=np.int64)
        pr[K.P_NBO] = params.n_bo
        pr[K.P_NMIT] = params.n_mit
        pr[K.P_ABO_ACT] = params.abo_act
        pr[K.P_DELAY] = params.abo_delay
        pr[K.P_BR] = params.blast_radius
        pr[K.P_ROWS] = timings.rows_per_bank
        pr[K.P_KIND] = _KIND_CODE[policy.queue_kind]
        pr[K.P_OPP] = int(policy.opportunistic)
        pr[K.P_PRO] = _PRO_CODE[policy.proactive]
        pr[K.P_NPRO] = policy.resolved_n_pro(params)
        pr[K.P_M] = policy.mitigation_threshold
        pr[K.P_REFMIT] = int(policy.fifo_ref_mitigation)
        pr[K.P_BLOCK] = int(policy.block_abo_toggle)
        pr[K.P_DEDUPE] = int(policy.fifo_dedupe)
        pr[K.P_TRC] = timings.t_rc
        pr[K.P_TRFC] = timings.t_rfc
        pr[K.P_TRFM] = timings.t_rfm_ab
        pr[K.P_APT] = max(1, acts_per_trefi(timings))
        pr[K.P_CAP] = policy.queue_capacity
        pr[K.P_NBANKS] = self.n_banks
        pr[K.P_MAXB] = params.n_bo + IDEAL_BUCKET_HEADROOM
        pr[K.P_AUTOREF] = int(auto_refresh)
        pr[K.P_RECORD] = int(record_cap > 0)
        self._a = K.new_arrays(pr, self.n_banks, timings.rows_per_bank, record_cap)
        self.banks = [BankView(self, i) for i in range(self.n_banks)]

    # -- plumbing -----------------------------------------------------------
    @property
    def _pr(self) -> np.ndarray:
        return self._a[0]

    @property
    def _st(self) -> np.ndarray:
        return self._a[1]

    def copy(self) -> "ChannelState":
        other = object.__new__(ChannelState)
        other.params, other.timings, other.policy = self.params, self.timings, self.policy
        other.n_banks = self.n_banks
        other._a = [a.copy() for a in self._a]
        other.banks = [BankView(other, i) for i in range(other.n_banks)]
        return other

    @property
    def clock_ns(self) -> int:
        return int(self._st[K.S_CLOCK])

    @property
    def alert_active(self) -> bool:
        return bool(self._st[K.S_ALERT])

    @property
    def acts_in_abo_window(self) -> int:
        return int(self._st[K.S_WIN])

    @property
    def service_due(self) -> bool:
        """True when the next ACT would exceed the ABO window."""
        return bool(K.k_service_due(self._pr, self._st))

    @property
    def auto_refresh(self) -> bool:
        return bool(self._pr[K.P_AUTOREF])

    @auto_refresh.setter
    def auto_refresh(self, on: bool) -> None:
        self._pr[K.P_AUTOREF] = int(on)

    def queue_rows(self, bank: int) -> list[int]:
        q, bk = self._a[6], self._a[7]
        n = int(bk[bank, K.B_QN])
        kind = self.policy.queue_kind
        if kind == "psq":
            rows = [int(r) for r in q[bank, :n]]
            cnt, upd = self._a[2], self._a[3]
            return sorted(rows, key=lambda r: (-int(cnt[bank, r]), int(upd[bank, r])))
        if kind == "ideal":
            return self._ideal_order(bank)
        cap = q.shape[1]
        h = int(bk[bank, K.B_FHEAD])
        return [int(q[bank, (h + i) % cap]) for i in range(n)]

    def _ideal_order(self, bank: int) -> list[int]:
        head, nxt = self._a[8], self._a[10]
        out = []
        for c in range(int(self._a[7][bank, K.B_TOP]), 0, -1):
            r = int(head[bank, c])
            while r >= 0:
                out.append(r)
                r = int(nxt[bank, r])
        return out

    def counter(self, bank: int, row: int) -> int:
        return int(self._a[2][bank, row])

    def mitigated(self, bank: int, row: int) -> bool:
        return bool(self._a[5][bank, row])

    def _check_target(self, bank: int, row: int, step: int | None = None) -> None:
        if not 0 <= bank < self.n_banks:
            raise PatternError(f"bank {bank} out of range [0, {self.n_banks})", step)
        if not 0 <= row < self.timings.rows_per_bank:
            raise PatternError(f"row {row} out of range [0, {self.timings.rows_per_bank})", step)

    def _raise_if_error(self) -> None:
        err = int(self._st[K.S_ERR])
        if err == K.E_ABO_WINDOW:
            self._st[K.S_ERR] = K.E_OK
            raise ControllerError(
                f"more than abo_act={self.params.abo_act} ACTs issued while an alert was pending")
        if err == K.E_BUCKET:
            raise RuntimeError("counter exceeded the ideal reference's bucket range")

    # -- operations ---------------------------------------------------------
    def activate(self, bank: int, row: int) -> None:
        """Issue one ACT. No implicit service or refresh."""
        self._check_target(bank, row)
        K.k_activate(*self._a, bank, row)
        self._raise_if_error()

    def step(self, bank: int, row: int) -> None:
        """Controller-driven ACT: services a due alert first, refreshes on cadence."""
        self._check_target(bank, row)
        K.k_step(*self._a, bank, row)
        self._raise_if_error()

    def service_alert(self) -> bool:
        return bool(K.k_service(*self._a))

    def refresh_tick(self) -> None:
        K.k_refresh(*self._a)

    def run_ops(self, ops: np.ndarray, clock_limit: int = 0) -> int:
        done = K.k_run(*self._a, np.ascontiguousarray(ops, dtype=np.int64), clock_limit)
        self._raise_if_error()
        return int(done)

    def stats(self) -> SimStats:
        st, maxc = self._st, self._a[4]
        mu = {}
        for b in range(self.n_banks):
            for r in np.flatnonzero(maxc[b]):
                mu[(b, int(r))] = int(maxc[b, r])
        return SimStats(
            alerts=int(st[K.S_ALERTS]),
            rfms_issued=int(st[K.S_RFMS]),
            mitigations_by_kind={
                "alert": int(st[K.S_MIT + K.MIT_ALERT]),
                "opportunistic": int(st[K.S_MIT + K.MIT_OPP]),
                "proactive": int(st[K.S_MIT + K.MIT_PRO]),
            },
            max_unmitigated=mu,
            timeline_ns=int(st[K.S_CLOCK]),
            activations=int(st[K.S_ACTS]),
            refreshes=int(st[K.S_REFS]),
            bypasses=int(st[K.S_BYPASS]),
            noop_services=int(st[K.S_NOOP]),
        )

    def max_unmitigated(self, bank: int, row: int) -> int:
        return int(self._a[4][bank, row])

    def recorded_ops(self) -> np.ndarray:
        if not self._pr[K.P_RECORD]:
            raise RuntimeError("channel was created without recording")
        if self._st[K.S_TRUNC]:
            raise RuntimeError("recording buffer overflowed")
        return self._a[12][: int(self._st[K.S_NEV])].copy()


# ---------------------------------------------------------------- functional API

def activate(channel: ChannelState, bank_idx: int, row_id: int) -> ChannelState:
    channel.activate(bank_idx, row_id)
    return channel


def service_alert(channel: ChannelState) -> bool:
    return channel.service_alert()


def refresh_tick(channel: ChannelState) -> None:
    channel.refresh_tick()


# ---------------------------------------------------------------- patterns and traces

Op = tuple  # ("ACT", bank, row) | ("REF",) | ("SERVICE",)


def ops_to_array(pattern: Iterable[Op]) -> np.ndarray:
    rows = []
    for i, op in enumerate(pattern):
        if not op:
            raise PatternError("empty op", i)
        tag = op[0]
        if tag == "ACT":
            if len(op) != 3:
                raise PatternError("ACT needs bank and row", i)
            rows.append((K.EV_ACT, int(op[1]), int(op[2])))
        elif tag == "REF":
            rows.append((K.EV_REF, -1, -1))
        elif tag == "SERVICE":
            rows.append((K.EV_SERVICE, -1, -1))
        else:
            raise PatternError(f"unknown op {tag!r}", i)
    if not rows:
        return np.zeros((0, 3), dtype=np.int64)
    return np.asarray(rows, dtype=np.int64)


def array_to_ops(arr: np.ndarray) -> list[Op]:
    out: list[Op] = []
    for kind, b, r in arr.tolist():
        if kind == K.EV_ACT:
            out.append(("ACT", b, r))
        elif kind == K.EV_REF:
            out.append(("REF",))
        else:
            out.append(("SERVICE",))
    return out


def run_pattern(channel: ChannelState, pattern: Iterable[Op] | np.ndarray,
                multi_window: bool = False) -> SimStats:
    """Drive the channel with a pattern and return its stats.

    The controller services an alert once abo_act ACTs have followed it and,
    when ``channel.auto_refresh`` is set, issues one REF per acts_per_trefi
    ACTs. Explicit ``SERVICE``/``REF`` ops are honoured as written.
    """
    arr = pattern if isinstance(pattern, np.ndarray) else ops_to_array(pattern)
    if arr.size:
        acts = arr[:, 0] == K.EV_ACT
        banks, rows = arr[acts, 1], arr[acts, 2]
        bad = np.flatnonzero((banks < 0) | (banks >= channel.n_banks)
                             | (rows < 0) | (rows >= channel.timings.rows_per_bank))
        if bad.size:
            step = int(np.flatnonzero(acts)[bad[0]])
            channel._check_target(int(arr[step, 1]), int(arr[step, 2]), step)
    limit = 0 if multi_window else channel.timings.t_refw
    done = channel.run_ops(arr, clock_limit=limit)
    if done < len(arr):
        raise PatternError("pattern exceeds one refresh window (pass multi_window=True)", done)
    return channel.stats()


def format_trace(ops: Iterable[Op]) -> str:
    lines = []
    for op in ops:
        if op[0] == "ACT":
            lines.append(f"ACT {op[1]} {op[2]}")
        else:
            lines.append(op[0])
    return "\n".join(lines) + ("\n" if lines else "")


def parse_trace(text: str) -> list[Op]:
    ops: list[Op] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0].upper()
        if tag == "ACT":
            if len(parts) != 3:
                raise PatternError(f"line {lineno}: expected 'ACT <bank> <row>'")
            try:
                ops.append(("ACT", int(parts[1]), int(parts[2])))
            except ValueError:
                raise PatternError(f"line {lineno}: bank and row must be integers") from None
        elif tag in ("REF", "SERVICE") and len(parts) == 1:
            ops.append((tag,))
        else:
            raise PatternError(f"line {lineno}: unrecognised {line!r}")
    return ops


@dataclass
class Trace:
    """A replayable trace plus the configuration it was recorded under."""

    ops: list
    params: PracParams
    timings: DramTimings
    policy: MitigationPolicy
    n_banks: int

    def header(self) -> list[str]:
        cfg = {"params": asdict(self.params), "policy": asdict(self.policy), "n_banks": self.n_banks,
               "timings": asdict(self.timings)}
        return ["# pracsim trace", "# config " + json.dumps(cfg, sort_keys=True)]

    def dumps(self) -> str:
        return "\n".join(self.header()) + "\n" + format_trace(self.ops)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "Trace":
        cfg = None
        for line in text.splitlines():
            if line.startswith("# config "):
                cfg = json.loads(line[len("# config "):])
                break
        if cfg is None:
            raise PatternError("trace has no '# config' header")
        return cls(ops=parse_trace(text), params=PracParams(**cfg["params"]),
                   timings=DramTimings(**cfg["timings"]), policy=MitigationPolicy(**cfg["policy"]),
                   n_banks=int(cfg["n_banks"]))

    @classmethod
    def load(cls, path: str | Path) -> "Trace":
        return cls.loads(Path(path).read_text())

    def replay(self) -> SimStats:
        # REF ops are explicit in a recorded trace
        ch = ChannelState(self.params, self.timings, self.policy, n_banks=self.n_banks,
                          auto_refresh=False)
        return run_pattern(ch, self.ops, multi_window=True)


def iter_acts(pattern: Sequence[Op]) -> Iterator[tuple[int, int]]:
    for op in pattern:
        if op[0] == "ACT":
            yield op[1], op[2]
