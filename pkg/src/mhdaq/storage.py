"""Run files (``.mhdq``) and Replay-mode offline merging.

File layout: ``b"MHDQ"``, format version ``u16``, then framed records
(see :mod:`mhdaq.transport`): a run-header first, an end-of-run last.
"""
from __future__ import annotations

import heapq
import os
import struct
import warnings
from dataclasses import dataclass, field
from typing import Iterable

from .errors import BadMagic, ClockSkewWarning, DecodeError, UnsortedInput, UnsupportedVersion
from .event_builder import Event, EventKey
from .frontend import Fragment
from .transport import (EndOfRun, EventRecord, RunHeader, SkippedUnknown, SyncMarker,
                        encode_record, iter_records)

MAGIC = b"MHDQ"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sH")
PREAMBLE_SIZE = _PREAMBLE.size
EXTENSION = ".mhdq"
DEFAULT_WINDOW_TICKS = 100


@dataclass
class RunFile:
    header: RunHeader
    records: list = field(default_factory=list)
    end: EndOfRun | None = None
    version: int = FORMAT_VERSION
    path: str | None = None

    def fragments(self) -> list[Fragment]:
        return [r for r in self.records if isinstance(r, Fragment)]

    def to_bytes(self) -> bytes:
        parts = [_PREAMBLE.pack(MAGIC, self.version), encode_record(self.header)]
        parts += [encode_record(r) for r in self.records]
        if self.end is not None:
            parts.append(encode_record(self.end))
        return b"".join(parts)


class RunWriter:
    """Streaming writer; ``close`` appends the end-of-run record."""

    def __init__(self, path, run_id: int = 0, frontend_id: int = 0, epoch_ns: int = 0):
        self.path = os.fspath(path)
        self.header = RunHeader(run_id, epoch_ns, frontend_id)
        self.n_records = 0
        self._f = open(self.path, "wb")
        self._f.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION))
        self._f.write(encode_record(self.header))

    def write(self, record) -> None:
        if isinstance(record, Event):
            record = record.to_record()
        self._f.write(encode_record(record))
        self.n_records += 1

    def close(self) -> None:
        if self._f is not None:
            self._f.write(encode_record(EndOfRun(self.n_records)))
            self._f.close()
            self._f = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_run(path, records: Iterable, run_id: int = 0, frontend_id: int = 0,
              epoch_ns: int = 0) -> RunFile:
    with RunWriter(path, run_id, frontend_id, epoch_ns) as w:
        body = []
        for r in records:
            w.write(r)
            body.append(r.to_record() if isinstance(r, Event) else r)
    return RunFile(w.header, body, EndOfRun(w.n_records), FORMAT_VERSION, w.path)


def parse_run(data: bytes, path=None) -> RunFile:
    if len(data) < PREAMBLE_SIZE:
        raise BadMagic(f"{path or 'input'}: too short for a run file")
    magic, version = _PREAMBLE.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"{path or 'input'}: magic {magic!r} is not {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"{path or 'input'}: format version {version}, "
                                 f"reader supports {FORMAT_VERSION}")
    records = list(iter_records(memoryview(data)[PREAMBLE_SIZE:]))
    if not records or not isinstance(records[0], RunHeader):
        raise DecodeError(f"{path or 'input'}: first record is not a run-header")
    run = RunFile(records[0], version=version, path=path)
    body = records[1:]
    if body and isinstance(body[-1], EndOfRun):
        run.end = body.pop()
    run.records = body
    return run


def read_run(path) -> RunFile:
    path = os.fspath(path)
    with open(path, "rb") as f:
        return parse_run(f.read(), path)


def dump_lines(run: RunFile) -> list[str]:
    """One human-readable line per record."""
    h = run.header
    lines = [f"run-header   run={h.run_id} frontend={h.frontend_id} epoch_ns={h.epoch_ns} "
             f"version={run.version}"]
    for r in run.records:
        if isinstance(r, Fragment):
            lines.append(f"fragment     ts={r.timestamp} port={r.port_id} seq={r.seq_no} "
                         f"fe={r.frontend_id} ch={len(r.channels)} "
                         f"samples={r.samples_per_channel}")
        elif isinstance(r, SyncMarker):
            lines.append(f"sync-marker  global_ps={r.global_ps} local_ps={r.local_ps}")
        elif isinstance(r, EventRecord):
            ts = min((f.timestamp for f in r.fragments), default=0)
            lines.append(f"event        ts={ts} port={r.port_id} seq={r.seq_no} "
                         f"complete={int(r.complete)} fragments={len(r.fragments)}")
        elif isinstance(r, SkippedUnknown):
            lines.append(f"unknown      type=0x{r.record_type:02x} bytes={len(r.payload)}")
        else:
            lines.append(f"{type(r).__name__}")
    if run.end is not None:
        lines.append(f"end-of-run   records={run.end.n_records}")
    return lines


# -- replay ------------------------------------------------------------------------

@dataclass(frozen=True)
class CoincidenceWindow:
    half_width_ticks: int = DEFAULT_WINDOW_TICKS

    def __post_init__(self):
        if self.half_width_ticks < 1:
            raise ValueError("half_width_ticks must be >= 1")


@dataclass
class ReplayResult:
    events: list
    orphans: list  # non-source fragments that joined no cluster

    @property
    def unmatched(self) -> list[Fragment]:
        """Fragments not grouped with any other front-end's fragment."""
        singles = [e.fragments[0] for e in self.events if len(e.fragments) == 1]
        return sorted(self.orphans + singles,
                      key=lambda f: (f.timestamp, f.port_id, f.seq_no, f.frontend_id))


class _Cluster:
    __slots__ = ("ts", "port", "seq", "members")

    def __init__(self, frag):
        self.ts = frag.timestamp
        self.port = frag.port_id
        self.seq = frag.seq_no
        self.members = {frag.frontend_id: frag}


def _port_streams(runs):
    streams = []
    for fi, run in enumerate(runs):
        by_port = {}
        for f in run.fragments():
            by_port.setdefault(f.port_id, []).append(f)
        for port, frags in sorted(by_port.items()):
            for a, b in zip(frags, frags[1:]):
                if b.timestamp < a.timestamp:
                    raise UnsortedInput(
                        f"{run.path or f'file {fi}'}: port {port} timestamp {b.timestamp} "
                        f"follows {a.timestamp}")
            streams.append([((f.timestamp, f.port_id, f.seq_no, f.frontend_id, fi), f)
                            for f in frags])
    return streams


def replay_merge(files, window: CoincidenceWindow | int = DEFAULT_WINDOW_TICKS,
                 source_ports=None, expected_frontends=None) -> ReplayResult:
    """Group fragments from several run files by timestamp coincidence.

    A fragment on a source port opens a cluster unless it can join an
    earlier one.  Fragments join the earliest-opening open cluster within
    ``half_width_ticks`` of its opening timestamp that has nothing yet from
    their front-end; source-port fragments only join clusters of their own
    port.  ``source_ports=None`` treats every port seen as a source.
    """
    if isinstance(window, int):
        window = CoincidenceWindow(window)
    hw = window.half_width_ticks
    runs = [f if isinstance(f, RunFile) else read_run(f) for f in files]
    streams = _port_streams(runs)
    if source_ports is None:
        source_ports = {f.port_id for run in runs for f in run.fragments()}
    source_ports = set(source_ports)

    events: list[Event] = []
    orphans: list[Fragment] = []
    open_clusters: list[_Cluster] = []
    pending: list[Fragment] = []

    def finish(c: _Cluster):
        frags = tuple(c.members[fe] for fe in sorted(c.members))
        stamps = [f.timestamp for f in frags]
        if max(stamps) - min(stamps) > hw:
            warnings.warn(f"cluster {c.port}/{c.seq}: member timestamps span "
                          f"{max(stamps) - min(stamps)} ticks > {hw}", ClockSkewWarning)
        if expected_frontends is not None:
            complete = set(c.members) == set(expected_frontends.get(c.port, ()))
        else:
            complete = len(frags) > 1
        events.append(Event(EventKey(c.port, c.seq), frags, complete, min(stamps)))

    for _, frag in heapq.merge(*streams, key=lambda item: item[0]):
        t = frag.timestamp
        while open_clusters and open_clusters[0].ts < t - hw:
            finish(open_clusters.pop(0))
        while pending and pending[0].timestamp < t - hw:
            orphans.append(pending.pop(0))

        is_source = frag.port_id in source_ports
        for c in open_clusters:
            if frag.frontend_id not in c.members and (not is_source or c.port == frag.port_id):
                c.members[frag.frontend_id] = frag
                break
        else:
            if is_source:
                c = _Cluster(frag)
                keep = []
                for o in pending:
                    if o.timestamp >= t - hw and o.frontend_id not in c.members:
                        c.members[o.frontend_id] = o
                    else:
                        keep.append(o)
                pending = keep
                open_clusters.append(c)
            else:
                pending.append(frag)

    for c in open_clusters:
        finish(c)
    orphans.extend(pending)
    return ReplayResult(events, orphans)
