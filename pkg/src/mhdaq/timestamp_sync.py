"""Global 10 ns timestamps and two-point clock correction.

Front-ends run free on local oscillators (``ClockModel``).  A broadcast sync
pulse carries the true global time; each front-end latches its local time on
arrival and keeps an offset + rate estimate from the last two pulses.  This
stands in for the facility's hardware time distribution, whose protocol is
not modelled.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import NonMonotonicSync, Unsynchronized

TICK_PS = 10_000


def ps_to_ticks(ps) -> int:
    """Nearest tick, ties to even.  Exact for integer ps."""
    if isinstance(ps, int):
        q, r = divmod(ps, TICK_PS)
        if 2 * r > TICK_PS or (2 * r == TICK_PS and q % 2 == 1):
            q += 1
        return q
    return round(ps / TICK_PS)


def ticks_to_ps(ticks: int) -> int:
    return int(ticks) * TICK_PS


@dataclass(frozen=True)
class ClockModel:
    offset_ps: int = 0
    drift_ppm: float = 0.0

    def __post_init__(self):
        if abs(self.drift_ppm) > 100:
            raise ValueError("|drift_ppm| must be <= 100")

    @property
    def rate(self) -> float:
        return 1.0 + self.drift_ppm * 1e-6

    def local_ps(self, global_ps: int) -> int:
        """Local clock reading (integer ps) at a true global instant."""
        return self.offset_ps + round(global_ps * self.rate)

    def global_ps(self, local_ps: int) -> float:
        return (local_ps - self.offset_ps) / self.rate


@dataclass(frozen=True)
class SyncState:
    frontend_id: int
    last_sync_local_ps: int | None = None
    last_sync_global_ps: int | None = None
    estimated_offset_ps: float = 0.0
    estimated_rate: float = 1.0
    n_pulses: int = 0

    @property
    def synchronized(self) -> bool:
        return self.n_pulses >= 1


def apply_sync_pulse(state: SyncState, local_ps: int, global_ps: int) -> SyncState:
    """Latch a pulse; with two or more pulses the rate comes from the last pair."""
    if state.n_pulses and global_ps <= state.last_sync_global_ps:
        raise NonMonotonicSync(
            f"sync pulse at global {global_ps} ps not after {state.last_sync_global_ps} ps")
    rate = state.estimated_rate
    if state.n_pulses:
        rate = (local_ps - state.last_sync_local_ps) / (global_ps - state.last_sync_global_ps)
    return replace(state, last_sync_local_ps=local_ps, last_sync_global_ps=global_ps,
                   estimated_offset_ps=float(local_ps - global_ps),
                   estimated_rate=rate, n_pulses=state.n_pulses + 1)


def local_to_global_ps(state: SyncState, local_ps: int) -> float:
    if not state.synchronized:
        raise Unsynchronized(f"front-end {state.frontend_id} has seen no sync pulse")
    return state.last_sync_global_ps + (local_ps - state.last_sync_local_ps) / state.estimated_rate


def local_to_global(state: SyncState, local_ps: int) -> int:
    """Timestamp (in ticks) of a local clock reading."""
    ticks = ps_to_ticks(local_to_global_ps(state, local_ps))
    if ticks < 0:
        raise ValueError("local time maps before run start")
    return ticks


def global_to_local(state: SyncState, global_ps: float) -> int:
    if not state.synchronized:
        raise Unsynchronized(f"front-end {state.frontend_id} has seen no sync pulse")
    return round(state.last_sync_local_ps
                 + (global_ps - state.last_sync_global_ps) * state.estimated_rate)
