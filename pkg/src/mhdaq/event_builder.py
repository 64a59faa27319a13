"""RealTime-mode event building keyed on (trigger source, sequence number)."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Mapping

from .errors import DuplicateFragment, ForeignSource, NonMonotonicTime
from .frontend import Fragment
from .transport import EventRecord

DEFAULT_TIMEOUT_TICKS = 10_000_000  # 100 ms


@dataclass(frozen=True, order=True)
class EventKey:
    port_id: int
    seq_no: int


@dataclass(frozen=True)
class Event:
    key: EventKey
    fragments: tuple  # sorted by frontend_id
    complete: bool
    build_timestamp: int

    def to_record(self) -> EventRecord:
        return EventRecord(self.key.port_id, self.key.seq_no, self.complete, self.fragments)

    def grouping(self):
        """Hashable identity of which fragments were grouped together."""
        return (self.key.port_id, self.key.seq_no,
                tuple(sorted((f.frontend_id, f.port_id, f.seq_no) for f in self.fragments)))


@dataclass(frozen=True)
class BuilderConfig:
    expected_frontends: Mapping[int, frozenset]  # trigger port -> front-end ids
    completion_timeout_ticks: int = DEFAULT_TIMEOUT_TICKS
    max_open_keys: int = 100_000

    def __post_init__(self):
        if self.completion_timeout_ticks <= 0:
            raise ValueError("completion_timeout_ticks must be > 0")
        if self.max_open_keys <= 0:
            raise ValueError("max_open_keys must be > 0")
        object.__setattr__(self, "expected_frontends",
                           {int(p): frozenset(s) for p, s in self.expected_frontends.items()})


@dataclass(frozen=True)
class BuilderStats:
    complete: int = 0
    incomplete: int = 0
    duplicates: int = 0
    open: int = 0
    fragments: int = 0


@dataclass
class _Open:
    arrival: int
    fragments: dict = field(default_factory=dict)


class EventBuilder:
    def __init__(self, config: BuilderConfig, builder_id: int = 0):
        self.config = config
        self.builder_id = builder_id
        self.now = 0
        self._open: dict[EventKey, _Open] = {}
        self._by_age: list[tuple[int, EventKey]] = []
        self._complete = 0
        self._incomplete = 0
        self._duplicates = 0
        self._fragments = 0

    def submit_fragment(self, fragment: Fragment, now: int | None = None) -> list[Event]:
        expected = self.config.expected_frontends.get(fragment.port_id)
        if expected is None:
            raise ForeignSource(f"port {fragment.port_id} is not a source of builder "
                                f"{self.builder_id}")
        arrival = self.now if now is None else now
        key = EventKey(fragment.port_id, fragment.seq_no)
        emitted = []
        slot = self._open.get(key)
        if slot is not None and fragment.frontend_id in slot.fragments:
            self._duplicates += 1
            raise DuplicateFragment(f"front-end {fragment.frontend_id} sent {key} twice")
        if slot is None:
            if len(self._open) >= self.config.max_open_keys:
                emitted.append(self._close_oldest())
            slot = self._open[key] = _Open(arrival)
            heapq.heappush(self._by_age, (arrival, key))
        slot.fragments[fragment.frontend_id] = fragment
        self._fragments += 1
        if expected <= slot.fragments.keys():
            emitted.append(self._close(key, complete=True))
        emitted.sort(key=lambda e: e.key)
        return emitted

    def advance_time(self, now: int) -> list[Event]:
        """Close keys whose first fragment arrived more than the timeout ago."""
        if now < self.now:
            raise NonMonotonicTime(f"time went back from {self.now} to {now}")
        self.now = now
        emitted = []
        limit = now - self.config.completion_timeout_ticks
        while self._by_age and self._by_age[0][0] < limit:
            _, key = heapq.heappop(self._by_age)
            if key in self._open and self._open[key].arrival < limit:
                emitted.append(self._close(key, complete=False))
        emitted.sort(key=lambda e: e.key)
        return emitted

    def flush(self) -> list[Event]:
        """End of run: every open key is emitted incomplete, in key order."""
        emitted = [self._close(k, complete=False) for k in sorted(self._open)]
        self._by_age.clear()
        return emitted

    def stats(self) -> BuilderStats:
        return BuilderStats(self._complete, self._incomplete, self._duplicates,
                            len(self._open), self._fragments)

    def _close_oldest(self) -> Event:
        while True:
            arrival, key = heapq.heappop(self._by_age)
            slot = self._open.get(key)
            if slot is not None and slot.arrival == arrival:
                return self._close(key, complete=False)

    def _close(self, key: EventKey, complete: bool) -> Event:
        slot = self._open.pop(key)
        frags = tuple(slot.fragments[fe] for fe in sorted(slot.fragments))
        if complete:
            self._complete += 1
        else:
            self._incomplete += 1
        return Event(key, frags, complete, min(f.timestamp for f in frags))


def builder_stats(builder: EventBuilder) -> BuilderStats:
    return builder.stats()
