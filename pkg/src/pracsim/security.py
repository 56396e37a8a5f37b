"""Closed-form security model for PRAC with alert-driven mitigation.

The wave attack warms ``r1`` rows to ``n_bo - 1`` (setup), then activates the
surviving pool once per round. Each round the alerts remove
``floor(n_mit * (R - BR) / (abo_act + abo_delay))`` rows; the row that
survives longest collects one activation per round plus the activations
that land around the last alert.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .params import DramTimings, PracParams, act_time_budget_ns, acts_per_trefi

PROACTIVE_ANALYTIC = ("off", "every_ref")
RFM_SCOPES = ("per_bank", "same_bank", "all_bank")
BANDWIDTH_N_BO = (16, 32, 64, 128)
N_BO_SWEEP = tuple(1 << i for i in range(9))  # 1, 2, 4, ..., 256


class DivergenceError(ArithmeticError):
    """The pool never shrinks, so no round bound exists."""


@dataclass(frozen=True)
class AnalysisConfig:
    params: PracParams = field(default_factory=PracParams)
    timings: DramTimings = field(default_factory=DramTimings)
    proactive: str = "off"
    alert_time_ns: int | None = None

    def __post_init__(self) -> None:
        if self.proactive not in PROACTIVE_ANALYTIC:
            raise ValueError(f"proactive must be one of {PROACTIVE_ANALYTIC}")
        if self.alert_time_ns is not None and self.alert_time_ns < 0:
            raise ValueError("alert_time_ns must be >= 0")

    @property
    def alert_ns(self) -> int:
        if self.alert_time_ns is not None:
            return self.alert_time_ns
        return self.params.n_mit * self.timings.t_rfm_ab

    def with_params(self, **changes) -> "AnalysisConfig":
        return AnalysisConfig(self.params.replace(**changes), self.timings, self.proactive,
                              self.alert_time_ns)


def alerts_per_round(pool: int, params: PracParams) -> int:
    """Alerts raised while one round activates ``pool`` rows."""
    return max(0, pool - params.blast_radius) // params.alert_period


def mitigations_per_round(pool: int, params: PracParams) -> int:
    return params.n_mit * max(0, pool - params.blast_radius) // params.alert_period


def round_time_ns(pool: int, config: AnalysisConfig) -> int:
    """Activation time plus alert time for one online round."""
    p = config.params
    acts = max(0, pool - p.blast_radius)
    alerts = mitigations_per_round(pool, p) // p.n_mit
    return acts * config.timings.t_rc + alerts * config.alert_ns


ExtraFn = Callable[[int, int], int]  # (round index, pool before the round) -> extra removals


def pool_sequence(r1: int, params: PracParams,
                  per_round_extra: int | ExtraFn = 0) -> tuple[list[int], int]:
    """Iterate the pool recursion from ``r1``.

    Stops once the pool is a single row, once the whole pool fits inside one
    alert period (every remaining row is reached by the next alert), or once
    the pool stops shrinking. The returned round count includes the final
    round.
    """
    if r1 < 1:
        raise ValueError("r1 must be >= 1")
    extra = per_round_extra if callable(per_round_extra) else (lambda _i, _r: per_round_extra)
    seq = [r1]
    if r1 == 1:
        return seq, 1
    first = r1 - mitigations_per_round(r1, params) - extra(0, r1)
    if first >= r1:
        raise DivergenceError(f"pool of {r1} rows never shrinks with n_mit={params.n_mit}")
    period = params.alert_period
    while True:
        r = seq[-1]
        if r <= 1 or r <= period:
            break
        nxt = r - mitigations_per_round(r, params) - extra(len(seq) - 1, r)
        if nxt >= r:
            break
        seq.append(max(nxt, 1))
    return seq, len(seq)


def online_bound(rounds: int, params: PracParams) -> int:
    return rounds + params.abo_act + params.abo_delay + params.blast_radius


def _setup_survivors(r0: int, config: AnalysisConfig) -> int:
    if config.proactive == "off":
        return r0
    setup_acts = r0 * (config.params.n_bo - 1)
    return max(0, r0 - setup_acts // acts_per_trefi(config.timings))


def _proactive_extra(config: AnalysisConfig) -> ExtraFn:
    t_refi = config.timings.t_refi
    return lambda _i, r: round_time_ns(r, config) // t_refi


def online_sequence(r0: int, config: AnalysisConfig) -> tuple[list[int], int]:
    """Pool sequence after setup, or ([], 0) when setup leaves no rows."""
    r1 = _setup_survivors(r0, config)
    if r1 < 1:
        return [], 0
    if config.proactive == "off":
        return pool_sequence(r1, config.params)
    return pool_sequence(r1, config.params, _proactive_extra(config))


def n_online(r1: int, config: AnalysisConfig | None = None) -> int:
    """Online-phase activations the last surviving row can collect."""
    config = config or AnalysisConfig()
    _, rounds = online_sequence(r1, config)
    if rounds == 0:
        # the pool is gone after setup; one fresh row is still available
        _, rounds = pool_sequence(1, config.params)
    return online_bound(rounds, config.params)


def attack_time_ns(r0: int, config: AnalysisConfig) -> int:
    """Setup plus online activation and alert time for an initial pool of r0."""
    p, t = config.params, config.timings
    total = r0 * (p.n_bo - 1) * t.t_rc
    seq, _ = online_sequence(r0, config)
    for r in seq[:-1]:
        total += round_time_ns(r, config)
    return total


def max_r1(n_bo: int, config: AnalysisConfig | None = None) -> int:
    """Largest initial pool whose setup and online phases fit one refresh window.

    Returns 0 when proactive mitigation empties the pool during setup.
    """
    config = (config or AnalysisConfig()).with_params(n_bo=n_bo)
    budget = act_time_budget_ns(config.timings)
    rows = config.timings.rows_per_bank

    def fits(r0: int) -> bool:
        try:
            return attack_time_ns(r0, config) <= budget
        except DivergenceError:
            return True  # a tiny pool has no online rounds to pay for

    lo, hi = 1, rows
    if not fits(lo):
        return 0
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if fits(mid):
            lo = mid
        else:
            hi = mid - 1
    if _setup_survivors(lo, config) < 1:
        return 0
    return lo


@dataclass(frozen=True)
class CurvePoint:
    n_bo: int
    n_mit: int
    proactive: str
    max_r1: int
    n_online: int
    min_secure_trh: int


@dataclass
class SecurityCurve:
    points: list[CurvePoint]

    CSV_HEADER = "n_bo,n_mit,proactive,max_r1,n_online,min_secure_trh"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for p in self.points:
            lines.append(f"{p.n_bo},{p.n_mit},{p.proactive},{p.max_r1},{p.n_online},{p.min_secure_trh}")
        return "\n".join(lines) + "\n"


def curve_point(n_bo: int, config: AnalysisConfig | None = None) -> CurvePoint:
    config = (config or AnalysisConfig()).with_params(n_bo=n_bo)
    r = max_r1(n_bo, config)
    non = n_online(r, config)
    return CurvePoint(n_bo, config.params.n_mit, config.proactive, r, non, n_bo + non)


def secure_trh(n_bo: int, config: AnalysisConfig | None = None) -> int:
    """Smallest Rowhammer threshold the configuration tolerates: n_bo + n_online."""
    return curve_point(n_bo, config).min_secure_trh


def curve(config: AnalysisConfig | None = None,
          n_bo_values: tuple[int, ...] = N_BO_SWEEP) -> SecurityCurve:
    config = config or AnalysisConfig()
    return SecurityCurve([curve_point(n, config) for n in n_bo_values])


def required_counter_bits(n_bo: int, config: AnalysisConfig | None = None) -> int:
    """Bits needed so the largest bounded count never overflows."""
    return max(1, secure_trh(n_bo, config).bit_length())


# ------------------------------------------------------------------ bandwidth

def scope_banks(scope: str, timings: DramTimings) -> int:
    """Banks stalled by one RFM of the given scope."""
    if scope == "all_bank":
        return timings.banks_per_channel
    if scope == "same_bank":
        return timings.bank_groups
    if scope == "per_bank":
        return 1
    raise ValueError(f"rfm_scope must be one of {RFM_SCOPES}")


def bandwidth_loss(n_bo: int, rfm_scope: str = "all_bank", proactive: str = "off",
                   config: AnalysisConfig | None = None) -> float:
    """Worst-case fraction of activation bandwidth lost to alert service.

    Every bank hammers its own rows and raises an alert each
    ``max(n_bo, abo_act + abo_delay)`` of its activations. Each alert stalls
    the banks in the RFM scope for ``alert_ns``. In steady state the lost
    share L of bank time satisfies
    ``(1 - L) * scope * alert_ns / (interval * t_rc) = L``.
    With proactive mitigation the loss is zero whenever the wave attack
    cannot finish setup (max_r1 == 0).
    """
    if n_bo not in BANDWIDTH_N_BO:
        raise ValueError(f"n_bo must be one of {BANDWIDTH_N_BO}")
    if proactive not in PROACTIVE_ANALYTIC:
        raise ValueError(f"proactive must be one of {PROACTIVE_ANALYTIC}")
    config = (config or AnalysisConfig()).with_params(n_bo=n_bo)
    t = config.timings
    s = scope_banks(rfm_scope, t)
    if proactive != "off":
        pro_cfg = AnalysisConfig(config.params, t, proactive, config.alert_time_ns)
        if max_r1(n_bo, pro_cfg) == 0:
            return 0.0
    interval = max(n_bo, config.params.alert_period)
    stall = s * config.alert_ns
    return stall / (interval * t.t_rc + stall)


@dataclass(frozen=True)
class BandwidthRow:
    n_bo: int
    scope: str
    proactive: str
    bw_loss: float


BANDWIDTH_CSV_HEADER = "n_bo,scope,proactive,bw_loss"


def bandwidth_table(config: AnalysisConfig | None = None) -> list[BandwidthRow]:
    rows = []
    for n_bo in BANDWIDTH_N_BO:
        for scope in RFM_SCOPES:
            for pro in PROACTIVE_ANALYTIC:
                rows.append(BandwidthRow(n_bo, scope, pro, bandwidth_loss(n_bo, scope, pro, config)))
    return rows


def bandwidth_csv(rows: list[BandwidthRow]) -> str:
    lines = [BANDWIDTH_CSV_HEADER]
    lines += [f"{r.n_bo},{r.scope},{r.proactive},{r.bw_loss:.6f}" for r in rows]
    return "\n".join(lines) + "\n"
