"""PRAC parameters, DDR5 timing constants and derived activation budgets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    """Raised for invalid parameter values or malformed config files."""


@dataclass(frozen=True)
class PracParams:
    """Alert Back-Off knobs plus the blast radius.

    ``abo_delay`` defaults to ``n_mit`` when left as ``None``.
    """

    n_bo: int = 32
    n_mit: int = 1
    abo_act: int = 3
    abo_delay: int | None = None
    blast_radius: int = 2

    def __post_init__(self) -> None:
        if self.abo_delay is None:
            object.__setattr__(self, "abo_delay", self.n_mit)
        if self.n_mit not in (1, 2, 4):
            raise ConfigError(f"n_mit must be 1, 2 or 4, got {self.n_mit}")
        if self.n_bo < 1:
            raise ConfigError(f"n_bo must be >= 1, got {self.n_bo}")
        if self.abo_act < 0:
            raise ConfigError(f"abo_act must be >= 0, got {self.abo_act}")
        if self.abo_delay < 0:
            raise ConfigError(f"abo_delay must be >= 0, got {self.abo_delay}")
        if self.blast_radius < 1:
            raise ConfigError(f"blast_radius must be >= 1, got {self.blast_radius}")

    @property
    def alert_period(self) -> int:
        """ACTs between consecutive services when alerts fire back to back."""
        return self.abo_act + self.abo_delay

    def replace(self, **changes: Any) -> "PracParams":
        # keep abo_delay tied to n_mit unless the caller overrides it
        if "n_mit" in changes and "abo_delay" not in changes:
            changes["abo_delay"] = None
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class DramTimings:
    """DDR5 timing constants in nanoseconds."""

    t_rc: int = 52
    t_refi: int = 3900
    t_refw: int = 32_000_000
    t_rfc: int = 410
    t_abo_act: int = 180
    t_rfm_ab: int = 350
    rows_per_bank: int = 131_072
    banks_per_channel: int = 32
    bank_groups: int = 8

    def __post_init__(self) -> None:
        for name in ("t_rc", "t_refi", "t_refw", "t_abo_act", "t_rfm_ab",
                     "rows_per_bank", "banks_per_channel", "bank_groups"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.t_rfc < 0:
            raise ConfigError("t_rfc must be non-negative")
        if self.t_refi <= self.t_rfc:
            raise ConfigError("t_refi must exceed t_rfc")
        if self.t_refw < self.t_refi:
            raise ConfigError("t_refw must be at least t_refi")
        n = self.rows_per_bank
        if n & (n - 1):
            raise ConfigError("rows_per_bank must be a power of two")

    def replace(self, **changes: Any) -> "DramTimings":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class CounterWidth:
    bits: int = 7

    @property
    def max_value(self) -> int:
        return (1 << self.bits) - 1

    def fits(self, count: int) -> bool:
        return 0 <= count <= self.max_value


def acts_per_trefi(timings: DramTimings) -> int:
    """Activation slots available between two REF commands."""
    return (timings.t_refi - timings.t_rfc) // timings.t_rc


def refs_per_window(timings: DramTimings) -> int:
    return timings.t_refw // timings.t_refi


def act_time_budget_ns(timings: DramTimings) -> int:
    """Time left for activations in one refresh window once REFs are paid.

    Each REF closes its tREFI interval, so a trailing partial interval loses
    ACT time only where it overlaps the next REF. This keeps the budget
    non-decreasing in t_refw.
    """
    per_interval = max(0, timings.t_refi - timings.t_rfc)
    tail = timings.t_refw % timings.t_refi
    return refs_per_window(timings) * per_interval + min(tail, per_interval)


def act_budget_per_window(timings: DramTimings) -> int:
    """Maximum single-bank ACTs in one refresh window."""
    return act_time_budget_ns(timings) // timings.t_rc


_PARAM_KEYS = {f.name for f in dataclasses.fields(PracParams)}
_TIMING_KEYS = {f.name for f in dataclasses.fields(DramTimings)}


def _parse_value(key: str, raw: str) -> int:
    raw = raw.strip().replace("_", "")
    try:
        return int(raw)
    except ValueError:
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
        if not value.is_integer():
            raise ConfigError(f"{key}: expected an integer, got {raw!r}")
        return int(value)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, int]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _PARAM_KEYS and key not in _TIMING_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _parse_value(key, raw)
    return out


def build(overrides: Mapping[str, int] | None = None) -> tuple[PracParams, DramTimings]:
    """Construct parameters from defaults plus flat overrides."""
    overrides = dict(overrides or {})
    unknown = set(overrides) - _PARAM_KEYS - _TIMING_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    p = {k: v for k, v in overrides.items() if k in _PARAM_KEYS}
    t = {k: v for k, v in overrides.items() if k in _TIMING_KEYS}
    return PracParams(**p), DramTimings(**t)


def load_config(path: str | Path | None = None,
                overrides: Mapping[str, int] | None = None) -> tuple[PracParams, DramTimings]:
    """Load a config file (optional) and apply overrides on top."""
    values: dict[str, int] = {}
    if path is not None:
        p = Path(path)
        values.update(parse_config_text(p.read_text(), source=str(p)))
    values.update(overrides or {})
    return build(values)


def known_keys() -> list[str]:
    return sorted(_PARAM_KEYS | _TIMING_KEYS)
