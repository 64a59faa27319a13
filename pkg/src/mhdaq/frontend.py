"""Dead-time-free multi-port front-end and the legacy single-gate model.

The digitizer writes continuously into a per-channel ring buffer.  A trigger
on any port only *reads* a window out of the buffer, so acceptance never
depends on how many other triggers were handled recently.  Windows whose
post-trigger part has not been digitized yet are parked and completed by the
ingest that delivers their last sample.
"""
from __future__ import annotations

import heapq
import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import _accel
from .errors import (DataOverwritten, FutureTrigger, NonMonotonicTrigger,
                     PeriodMismatch, UnknownPort)
from .signal_model import Waveform
from .timestamp_sync import (SyncState, TICK_PS, global_to_local, local_to_global,
                             ps_to_ticks, ticks_to_ps)

RETENTION_SAFETY = 4


@dataclass(frozen=True)
class TriggerPort:
    port_id: int
    destination_id: int
    pre_trigger_ns: float
    post_trigger_ns: float

    def __post_init__(self):
        if self.pre_trigger_ns < 0:
            raise ValueError("pre_trigger_ns must be >= 0")
        if self.post_trigger_ns <= 0:
            raise ValueError("post_trigger_ns must be > 0")

    @property
    def window_ps(self) -> int:
        return round((self.pre_trigger_ns + self.post_trigger_ns) * 1000)


@dataclass(frozen=True)
class TriggerPulse:
    port_id: int
    timestamp: int  # ticks


@dataclass(frozen=True, eq=False)
class Fragment:
    frontend_id: int
    port_id: int
    seq_no: int
    timestamp: int
    channels: tuple  # ((channel_id, codes), ...)

    @property
    def samples_per_channel(self) -> int:
        return len(self.channels[0][1]) if self.channels else 0

    @property
    def key(self):
        return (self.port_id, self.seq_no)

    def __eq__(self, other):
        if not isinstance(other, Fragment):
            return NotImplemented
        if (self.frontend_id, self.port_id, self.seq_no, self.timestamp) != \
                (other.frontend_id, other.port_id, other.seq_no, other.timestamp):
            return False
        if len(self.channels) != len(other.channels):
            return False
        return all(ca == cb and np.array_equal(a, b)
                   for (ca, a), (cb, b) in zip(self.channels, other.channels))

    __hash__ = None

    def __repr__(self):
        return (f"Fragment(fe={self.frontend_id}, port={self.port_id}, seq={self.seq_no}, "
                f"ts={self.timestamp}, {len(self.channels)}x{self.samples_per_channel})")


class RingBuffer:
    """Per-channel circular sample store indexed by absolute sample number."""

    def __init__(self, n_channels: int, capacity_samples: int, sample_period_ps: int,
                 dtype=np.uint16):
        if capacity_samples < 1:
            raise ValueError("capacity_samples must be >= 1")
        self.n_channels = n_channels
        self.capacity = capacity_samples
        self.sample_period_ps = sample_period_ps
        self.data = np.zeros((n_channels, capacity_samples), dtype=dtype)
        self.cursor = 0  # index of the next sample to be written
        self.valid_from = 0
        self._lock = threading.Lock()

    @property
    def retention_ps(self) -> int:
        return self.capacity * self.sample_period_ps

    @property
    def oldest_index(self) -> int:
        return max(self.valid_from, self.cursor - self.capacity)

    def write(self, codes: np.ndarray) -> None:
        codes = np.atleast_2d(codes)
        if codes.shape[0] != self.n_channels:
            raise ValueError(f"block has {codes.shape[0]} channels, buffer {self.n_channels}")
        n = codes.shape[1]
        with self._lock:
            if n >= self.capacity:
                tail = codes[:, n - self.capacity:]
                start = (self.cursor + n - self.capacity) % self.capacity
                self.data[:, start:] = tail[:, :self.capacity - start]
                self.data[:, :start] = tail[:, self.capacity - start:]
            else:
                start = self.cursor % self.capacity
                first = min(n, self.capacity - start)
                self.data[:, start:start + first] = codes[:, :first]
                self.data[:, :n - first] = codes[:, first:]
            self.cursor += n

    def skip_to(self, index: int) -> None:
        """Advance the write cursor without data; skipped samples are unreadable."""
        with self._lock:
            if index > self.cursor:
                self.cursor = index
                self.valid_from = index

    def read(self, first: int, n: int) -> np.ndarray:
        with self._lock:
            if first < self.oldest_index:
                raise DataOverwritten(
                    f"window starts at sample {first}, oldest retained is {self.oldest_index}")
            if first + n > self.cursor:
                raise FutureTrigger(
                    f"window ends at sample {first + n}, ingested up to {self.cursor}")
            idx = np.arange(first, first + n) % self.capacity
            return self.data[:, idx]


def ingest(buffer: RingBuffer, block: Waveform) -> RingBuffer:
    if block.sample_period_ps != buffer.sample_period_ps:
        raise PeriodMismatch(
            f"block period {block.sample_period_ps} ps != buffer {buffer.sample_period_ps} ps")
    buffer.write(block.codes)
    return buffer


@dataclass(order=True)
class _Pending:
    end: int
    order: int
    first: int = field(compare=False)
    port_id: int = field(compare=False)
    seq_no: int = field(compare=False)
    timestamp: int = field(compare=False)


class FrontEnd:
    """Ring buffer plus a trigger-port table.

    ``sync`` maps local clock readings to global ticks; without it local
    time is taken to be global time.
    """

    def __init__(self, frontend_id: int, ring: RingBuffer, ports: Iterable[TriggerPort],
                 sync: SyncState | None = None, channel_ids: Iterable[int] | None = None):
        self.frontend_id = frontend_id
        self.ring = ring
        self.ports = {}
        for p in ports:
            if p.port_id in self.ports:
                raise ValueError(f"duplicate port {p.port_id} on front-end {frontend_id}")
            self.ports[p.port_id] = p
        widest = max((p.window_ps for p in self.ports.values()), default=0)
        if ring.retention_ps < RETENTION_SAFETY * widest:
            raise ValueError(
                f"front-end {frontend_id}: retention {ring.retention_ps} ps is less than "
                f"{RETENTION_SAFETY} x widest window ({widest} ps)")
        self.sync = sync
        self.channel_ids = tuple(channel_ids) if channel_ids is not None \
            else tuple(range(ring.n_channels))
        self._next_seq = {pid: 0 for pid in self.ports}
        self._pending: list[_Pending] = []
        self._order = 0
        self.losses = 0
        self.fragments_emitted = 0

    # -- window geometry ---------------------------------------------------

    def window(self, port_id: int, local_ps: int) -> tuple[int, int]:
        """(first sample index, sample count) for a trigger at local time."""
        port = self._port(port_id)
        period = self.ring.sample_period_ps
        start_ps = local_ps - round(port.pre_trigger_ns * 1000)
        first = -((-start_ps) // period)
        return first, round(port.window_ps / period)

    def _port(self, port_id):
        try:
            return self.ports[port_id]
        except KeyError:
            raise UnknownPort(f"port {port_id} not configured on front-end "
                              f"{self.frontend_id}") from None

    def _local_of(self, pulse: TriggerPulse) -> int:
        ps = ticks_to_ps(pulse.timestamp)
        if self.sync is not None and self.sync.synchronized:
            return global_to_local(self.sync, ps)
        return ps

    def timestamp_of(self, local_ps: int) -> int:
        if self.sync is not None:
            return local_to_global(self.sync, local_ps)
        return ps_to_ticks(local_ps)

    # -- trigger handling ----------------------------------------------------

    def _make(self, port_id, seq_no, timestamp, first, n) -> Fragment:
        codes = self.ring.read(first, n)
        self.fragments_emitted += 1
        return Fragment(self.frontend_id, port_id, seq_no, timestamp,
                        tuple(zip(self.channel_ids, codes)))

    def accept_trigger(self, pulse: TriggerPulse) -> Fragment:
        """Extract the window now, or raise without consuming a sequence number."""
        return self._accept(pulse.port_id, pulse.timestamp, self._local_of(pulse), defer=False)

    def trigger(self, pulse: TriggerPulse, local_ps: int | None = None) -> Fragment | None:
        """Accept a trigger; returns the fragment, or None if completion is deferred."""
        if local_ps is None:
            local_ps = self._local_of(pulse)
        return self._accept(pulse.port_id, pulse.timestamp, local_ps, defer=True)

    def trigger_local(self, port_id: int, local_ps: int) -> tuple[int, Fragment | None]:
        """Trigger seen at a local clock reading; returns (timestamp, fragment or None)."""
        ts = self.timestamp_of(local_ps)
        return ts, self._accept(port_id, ts, local_ps, defer=True)

    def _accept(self, port_id, timestamp, local_ps, defer):
        first, n = self.window(port_id, local_ps)
        if first < self.ring.oldest_index:
            raise DataOverwritten(
                f"front-end {self.frontend_id} port {port_id}: window start {first} "
                f"older than retained {self.ring.oldest_index}")
        if first + n > self.ring.cursor:
            if not defer:
                raise FutureTrigger(f"window end {first + n} beyond ingested {self.ring.cursor}")
            seq = self._take_seq(port_id)
            heapq.heappush(self._pending, _Pending(first + n, self._order, first,
                                                   port_id, seq, timestamp))
            self._order += 1
            return None
        seq = self._take_seq(port_id)
        return self._make(port_id, seq, timestamp, first, n)

    def _take_seq(self, port_id):
        seq = self._next_seq[port_id]
        self._next_seq[port_id] = seq + 1
        return seq

    @property
    def pending(self) -> int:
        return len(self._pending)

    def next_pending_end(self) -> int | None:
        return self._pending[0].end if self._pending else None

    def earliest_pending_first(self) -> int | None:
        return min((p.first for p in self._pending), default=None)

    # -- data path -----------------------------------------------------------

    def ingest(self, block: Waveform) -> list[Fragment]:
        """Append a block; returns deferred fragments completed by it, in order."""
        if block.sample_period_ps != self.ring.sample_period_ps:
            raise PeriodMismatch(
                f"block period {block.sample_period_ps} ps != {self.ring.sample_period_ps} ps")
        codes = np.atleast_2d(block.codes)
        done = []
        pos = 0
        n = codes.shape[1]
        while True:
            done.extend(self._complete_ready())
            if pos >= n:
                return done
            stop = n
            if self._pending:
                stop = min(n, pos + self._pending[0].end - self.ring.cursor)
            self.ring.write(codes[:, pos:stop])
            pos = stop

    def skip_to(self, index: int) -> list[Fragment]:
        done = self._complete_ready()
        self.ring.skip_to(index)
        return done

    def _complete_ready(self) -> list[Fragment]:
        out = []
        while self._pending and self._pending[0].end <= self.ring.cursor:
            p = heapq.heappop(self._pending)
            try:
                out.append(self._make(p.port_id, p.seq_no, p.timestamp, p.first,
                                      p.end - p.first))
            except DataOverwritten:
                self.losses += 1
        return out


def route(fragment: Fragment, ports: Mapping) -> int:
    """Destination bound to the fragment's trigger port."""
    try:
        binding = ports[fragment.port_id]
    except KeyError:
        raise UnknownPort(f"port {fragment.port_id} is not bound") from None
    return binding.destination_id if isinstance(binding, TriggerPort) else int(binding)


# -- legacy comparison ----------------------------------------------------

@dataclass
class LegacyFrontend:
    """Single-gate front-end with a non-paralyzable conversion dead time."""
    dead_time_us: float = 200.0
    busy_until: int = 0
    accepted: int = 0
    rejected: int = 0
    last_timestamp: int | None = None

    @property
    def dead_ticks(self) -> int:
        return round(self.dead_time_us * 1e6 / TICK_PS)


def legacy_accept(legacy: LegacyFrontend, pulse: TriggerPulse) -> bool:
    t = pulse.timestamp
    if legacy.last_timestamp is not None and t < legacy.last_timestamp:
        raise NonMonotonicTrigger(f"trigger at {t} after {legacy.last_timestamp}")
    legacy.last_timestamp = t
    if t >= legacy.busy_until:
        legacy.busy_until = t + legacy.dead_ticks
        legacy.accepted += 1
        return True
    legacy.rejected += 1
    return False


def legacy_scan(timestamps, dead_time_us: float = 200.0) -> np.ndarray:
    """Vectorised ``legacy_accept`` over a sorted tick array; returns the accept mask."""
    ticks = np.asarray(timestamps, dtype=np.int64)
    if ticks.size and np.any(np.diff(ticks) < 0):
        raise NonMonotonicTrigger("trigger timestamps are not sorted")
    return _accel.legacy_scan(ticks, round(dead_time_us * 1e6 / TICK_PS))


def live_fraction(rate_hz: float, dead_time_s: float) -> float:
    """Accepted fraction for Poisson triggers through a non-paralyzable gate."""
    return 1.0 / (1.0 + rate_hz * dead_time_s)
