"""Service queues: the priority service queue (PSQ) and a FIFO queue."""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable


@dataclass
class PsqEntry:
    row_id: int
    count: int
    last_update: int

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("PSQ entries need count >= 1")


def _rank(e: PsqEntry) -> tuple[int, int]:
    # higher count first, then least recently updated
    return (-e.count, e.last_update)


class Psq:
    """Small array kept sorted by count, descending.

    Ties on count are ordered by ``last_update`` ascending, so the head is the
    staler of two equal rows and eviction takes the staler minimum.
    """

    def __init__(self, capacity: int = 5, entries: Iterable[PsqEntry] = ()):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.entries: list[PsqEntry] = sorted(entries, key=_rank)
        if len(self.entries) > capacity:
            raise ValueError("more entries than capacity")
        if len({e.row_id for e in self.entries}) != len(self.entries):
            raise ValueError("duplicate row in PSQ")
        self._seq = max((e.last_update for e in self.entries), default=0)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, row_id: int) -> bool:
        return any(e.row_id == row_id for e in self.entries)

    def __repr__(self) -> str:
        body = ", ".join(f"({e.row_id},{e.count})" for e in self.entries)
        return f"Psq(cap={self.capacity}, [{body}])"

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity

    def rows(self) -> list[int]:
        return [e.row_id for e in self.entries]

    def top(self) -> PsqEntry | None:
        return self.entries[0] if self.entries else None

    def min_entry(self) -> PsqEntry | None:
        if not self.entries:
            return None
        low = self.entries[-1].count
        # entries are sorted, so the staler minimum is the first one at `low`
        for e in self.entries:
            if e.count == low:
                return e
        return None  # unreachable

    def count_of(self, row_id: int) -> int | None:
        for e in self.entries:
            if e.row_id == row_id:
                return e.count
        return None

    def _next_seq(self, seq: int | None) -> int:
        if seq is None:
            self._seq += 1
            return self._seq
        self._seq = max(self._seq, seq)
        return seq

    def observe(self, row_id: int, count: int, seq: int | None = None) -> bool:
        """Apply the insertion rule in place. Returns True if the row is queued afterwards."""
        if count < 1:
            self.remove(row_id)
            return False
        seq = self._next_seq(seq)
        for i, e in enumerate(self.entries):
            if e.row_id == row_id:
                del self.entries[i]
                e.count = count
                e.last_update = seq
                self._insert_sorted(e)
                return True
        if not self.full:
            self._insert_sorted(PsqEntry(row_id, count, seq))
            return True
        victim = self.min_entry()
        if count > victim.count:
            self.entries.remove(victim)
            self._insert_sorted(PsqEntry(row_id, count, seq))
            return True
        return False

    def _insert_sorted(self, entry: PsqEntry) -> None:
        key = _rank(entry)
        i = 0
        while i < len(self.entries) and _rank(self.entries[i]) <= key:
            i += 1
        self.entries.insert(i, entry)

    def pop_top(self, k: int = 1) -> list[PsqEntry]:
        if k < 1:
            raise ValueError("k must be >= 1")
        out = self.entries[:k]
        del self.entries[:k]
        return out

    def remove(self, row_id: int) -> bool:
        for i, e in enumerate(self.entries):
            if e.row_id == row_id:
                del self.entries[i]
                return True
        return False

    def copy(self) -> "Psq":
        return copy.deepcopy(self)


def psq_observe(psq: Psq, row_id: int, count: int, seq: int | None = None) -> Psq:
    """Value-semantics wrapper: returns an updated copy."""
    out = psq.copy()
    out.observe(row_id, count, seq)
    return out


def psq_pop_top(psq: Psq, k: int) -> tuple[list[int], Psq]:
    out = psq.copy()
    return [e.row_id for e in out.pop_top(k)], out


@dataclass
class FifoQueue:
    """Bounded FIFO of row ids. Offers to a full queue are rejected."""

    capacity: int
    entries: deque = field(default_factory=deque)
    dedupe: bool = True

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.entries = deque(self.entries)
        if len(self.entries) > self.capacity:
            raise ValueError("more entries than capacity")

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, row_id: int) -> bool:
        return row_id in self.entries

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity

    def rows(self) -> list[int]:
        return list(self.entries)

    def offer(self, row_id: int) -> bool:
        """Append unless full. A row already queued counts as accepted."""
        if self.dedupe and row_id in self.entries:
            return True
        if self.full:
            return False
        self.entries.append(row_id)
        return True

    def pop(self, k: int = 1) -> list[int]:
        out = []
        while self.entries and len(out) < k:
            out.append(self.entries.popleft())
        return out

    def remove(self, row_id: int) -> bool:
        try:
            self.entries.remove(row_id)
        except ValueError:
            return False
        return True

    def copy(self) -> "FifoQueue":
        return FifoQueue(self.capacity, deque(self.entries), self.dedupe)


def fifo_offer(fifo: FifoQueue, row_id: int) -> tuple[FifoQueue, bool]:
    out = fifo.copy()
    accepted = out.offer(row_id)
    return out, accepted
