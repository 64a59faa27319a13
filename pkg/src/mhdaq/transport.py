"""Little-endian record framing and front-end -> builder delivery.

Every record is ``type:u8 flags:u8 length:u32`` followed by ``length``
payload bytes.  The same framing is used on the wire, in spill files and in
run files, so spilled data can be replayed without translation.
"""
from __future__ import annotations

import collections
import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import (ForeignSource, LengthMismatch, ProtocolVersionError,
                     SpillIOFailure, TruncatedRecord)
from .frontend import Fragment

PROTOCOL_VERSION = 1

REC_FRAGMENT = 0x01
REC_RUN_HEADER = 0x02
REC_SYNC = 0x03
REC_HELLO = 0x04
REC_END_OF_RUN = 0x05
REC_EVENT = 0x06

FLAG_SPILLED = 0x01

_HEADER = struct.Struct("<BBI")
_FRAG = struct.Struct("<HBBQQHI")
_RUN = struct.Struct("<IQH")
_SYNC = struct.Struct("<qq")
_HELLO = struct.Struct("<HHH")
_BINDING = struct.Struct("<BH")
_EOR = struct.Struct("<Q")
_EVENT = struct.Struct("<BBQBB")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")

HEADER_SIZE = _HEADER.size
FRAGMENT_FIXED_SIZE = _FRAG.size


@dataclass(frozen=True)
class RunHeader:
    run_id: int
    epoch_ns: int
    frontend_id: int


@dataclass(frozen=True)
class SyncMarker:
    local_ps: int
    global_ps: int


@dataclass(frozen=True)
class Hello:
    version: int
    frontend_id: int
    bindings: tuple  # ((port_id, destination_id), ...)


@dataclass(frozen=True)
class EndOfRun:
    n_records: int


@dataclass(frozen=True)
class EventRecord:
    port_id: int
    seq_no: int
    complete: bool
    fragments: tuple


@dataclass(frozen=True)
class SkippedUnknown:
    record_type: int
    flags: int
    payload: bytes


# -- encoding ------------------------------------------------------------------

def fragment_payload(f: Fragment) -> bytes:
    spc = f.samples_per_channel
    parts = [_FRAG.pack(f.frontend_id, f.port_id, 0, f.seq_no, f.timestamp,
                        len(f.channels), spc)]
    for channel_id, codes in f.channels:
        if len(codes) != spc:
            raise ValueError("channel windows of one fragment must have equal length")
        if codes.dtype != np.uint16:
            if codes.size and (codes.min() < 0 or codes.max() > 0xFFFF):
                raise ValueError("sample codes do not fit in u16")
        parts.append(_U16.pack(channel_id))
        parts.append(np.asarray(codes, dtype="<u2").tobytes())
    return b"".join(parts)


def _payload(rec) -> tuple[int, bytes]:
    if isinstance(rec, Fragment):
        return REC_FRAGMENT, fragment_payload(rec)
    if isinstance(rec, RunHeader):
        return REC_RUN_HEADER, _RUN.pack(rec.run_id, rec.epoch_ns, rec.frontend_id)
    if isinstance(rec, SyncMarker):
        return REC_SYNC, _SYNC.pack(rec.local_ps, rec.global_ps)
    if isinstance(rec, Hello):
        body = [_HELLO.pack(rec.version, rec.frontend_id, len(rec.bindings))]
        body += [_BINDING.pack(p, d) for p, d in rec.bindings]
        return REC_HELLO, b"".join(body)
    if isinstance(rec, EndOfRun):
        return REC_END_OF_RUN, _EOR.pack(rec.n_records)
    if isinstance(rec, EventRecord):
        if len(rec.fragments) > 0xFF:
            raise ValueError("an event record holds at most 255 fragments")
        body = [_EVENT.pack(rec.port_id, 0, rec.seq_no, int(rec.complete), len(rec.fragments))]
        for f in rec.fragments:
            fp = fragment_payload(f)
            body.append(_U32.pack(len(fp)))
            body.append(fp)
        return REC_EVENT, b"".join(body)
    if isinstance(rec, SkippedUnknown):
        return rec.record_type, rec.payload
    raise TypeError(f"cannot encode {type(rec).__name__}")


def encode_record(rec, flags: int = 0) -> bytes:
    if isinstance(rec, SkippedUnknown):
        flags = rec.flags
    rtype, payload = _payload(rec)
    return _HEADER.pack(rtype, flags, len(payload)) + payload


def encode_fragment(fragment: Fragment, flags: int = 0) -> bytes:
    return encode_record(fragment, flags)


# -- decoding ------------------------------------------------------------------

def _decode_fragment(p) -> Fragment:
    if len(p) < _FRAG.size:
        raise LengthMismatch(f"fragment payload of {len(p)} bytes is shorter than its header")
    fe, port, _reserved, seq, ts, nch, spc = _FRAG.unpack_from(p, 0)
    expected = _FRAG.size + nch * (2 + 2 * spc)
    if expected != len(p):
        raise LengthMismatch(f"fragment declares {expected} payload bytes, frame has {len(p)}")
    channels = []
    pos = _FRAG.size
    for _ in range(nch):
        (cid,) = _U16.unpack_from(p, pos)
        pos += 2
        codes = np.frombuffer(p, dtype="<u2", count=spc, offset=pos).astype(np.uint16)
        pos += 2 * spc
        channels.append((cid, codes))
    return Fragment(fe, port, seq, ts, tuple(channels))


def _exact(s: struct.Struct, p, name):
    if len(p) != s.size:
        raise LengthMismatch(f"{name} payload is {len(p)} bytes, expected {s.size}")
    return s.unpack(p)


def decode_payload(rtype: int, flags: int, p: bytes):
    if rtype == REC_FRAGMENT:
        return _decode_fragment(p)
    if rtype == REC_RUN_HEADER:
        return RunHeader(*_exact(_RUN, p, "run-header"))
    if rtype == REC_SYNC:
        return SyncMarker(*_exact(_SYNC, p, "sync-marker"))
    if rtype == REC_END_OF_RUN:
        return EndOfRun(*_exact(_EOR, p, "end-of-run"))
    if rtype == REC_HELLO:
        if len(p) < _HELLO.size:
            raise LengthMismatch("hello payload too short")
        version, fe, n = _HELLO.unpack_from(p, 0)
        if len(p) != _HELLO.size + n * _BINDING.size:
            raise LengthMismatch("hello binding count disagrees with payload length")
        bindings = tuple(_BINDING.unpack_from(p, _HELLO.size + i * _BINDING.size)
                         for i in range(n))
        return Hello(version, fe, bindings)
    if rtype == REC_EVENT:
        if len(p) < _EVENT.size:
            raise LengthMismatch("event payload too short")
        port, _reserved, seq, complete, n = _EVENT.unpack_from(p, 0)
        pos = _EVENT.size
        frags = []
        for _ in range(n):
            if pos + 4 > len(p):
                raise LengthMismatch("event payload ends inside a fragment length")
            (flen,) = _U32.unpack_from(p, pos)
            pos += 4
            if pos + flen > len(p):
                raise LengthMismatch("event payload ends inside a fragment")
            frags.append(_decode_fragment(p[pos:pos + flen]))
            pos += flen
        if pos != len(p):
            raise LengthMismatch("trailing bytes in event payload")
        return EventRecord(port, seq, bool(complete), tuple(frags))
    return SkippedUnknown(rtype, flags, bytes(p))


def decode_frame(data, offset: int = 0) -> tuple[int, int, bytes, int]:
    """(record_type, flags, payload, next_offset) of the frame at ``offset``."""
    if len(data) - offset < HEADER_SIZE:
        raise TruncatedRecord(f"{len(data) - offset} bytes left, frame header needs {HEADER_SIZE}")
    rtype, flags, length = _HEADER.unpack_from(data, offset)
    start = offset + HEADER_SIZE
    if start + length > len(data):
        raise TruncatedRecord(
            f"record type 0x{rtype:02x} declares {length} bytes, {len(data) - start} remain")
    return rtype, flags, bytes(data[start:start + length]), start + length


def decode_record(data, offset: int = 0):
    """Decode one framed record; returns ``(record, next_offset)``."""
    rtype, flags, payload, nxt = decode_frame(data, offset)
    return decode_payload(rtype, flags, payload), nxt


def iter_records(data) -> Iterator:
    pos = 0
    while pos < len(data):
        rec, pos = decode_record(data, pos)
        yield rec


class FrameDecoder:
    """Incremental decoder for a byte stream; yields ``(record, flags)``."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> list:
        self._buf += chunk
        out = []
        pos = 0
        while True:
            try:
                rtype, flags, payload, nxt = decode_frame(self._buf, pos)
            except TruncatedRecord:
                break
            out.append((decode_payload(rtype, flags, payload), flags))
            pos = nxt
        del self._buf[:pos]
        return out

    @property
    def buffered(self) -> int:
        return len(self._buf)


# -- send queue with spill -------------------------------------------------------

class SendQueue:
    """Bounded per-destination queue that spills to disk instead of blocking.

    Once anything is spilled, later fragments follow it to disk until the
    spill is drained, so delivery order always equals submission order.
    """

    def __init__(self, destination_id: int, bound: int = 64, spill_path=None):
        if bound < 1:
            raise ValueError("queue bound must be >= 1")
        self.destination_id = destination_id
        self.bound = bound
        self._mem = collections.deque()
        self._spill_path = spill_path
        self._spill = None
        self._read_pos = 0
        self._write_pos = 0
        self._spill_count = 0
        self.enqueued = 0
        self.spilled = 0
        self.delivered = 0

    def __len__(self):
        return len(self._mem) + self._spill_count

    def submit(self, fragment: Fragment) -> str:
        if self._spill_count == 0 and len(self._mem) < self.bound:
            self._mem.append(fragment)
            self.enqueued += 1
            return "enqueued"
        self._spill_write(encode_record(fragment, FLAG_SPILLED))
        self._spill_count += 1
        self.spilled += 1
        return "spilled"

    def pop(self) -> tuple[Fragment, bool] | None:
        if self._mem:
            self.delivered += 1
            return self._mem.popleft(), False
        if self._spill_count:
            frag = self._spill_read()
            self._spill_count -= 1
            self.delivered += 1
            if self._spill_count == 0:
                self._spill_reset()
            return frag, True
        return None

    def _spill_file(self):
        if self._spill is None:
            try:
                if self._spill_path is None:
                    self._spill = tempfile.TemporaryFile()
                else:
                    os.makedirs(os.path.dirname(os.path.abspath(self._spill_path)), exist_ok=True)
                    self._spill = open(self._spill_path, "w+b")
            except OSError as exc:
                raise SpillIOFailure(str(exc)) from exc
        return self._spill

    def _spill_write(self, frame: bytes):
        f = self._spill_file()
        try:
            f.seek(self._write_pos)
            f.write(frame)
        except OSError as exc:
            raise SpillIOFailure(str(exc)) from exc
        self._write_pos += len(frame)

    def _spill_read(self) -> Fragment:
        f = self._spill
        try:
            f.seek(self._read_pos)
            header = f.read(HEADER_SIZE)
            _, _, length = _HEADER.unpack(header)
            payload = f.read(length)
        except (OSError, struct.error) as exc:
            raise SpillIOFailure(str(exc)) from exc
        self._read_pos += HEADER_SIZE + length
        return _decode_fragment(payload)

    def _spill_reset(self):
        try:
            self._spill.seek(0)
            self._spill.truncate()
        except OSError as exc:
            raise SpillIOFailure(str(exc)) from exc
        self._read_pos = self._write_pos = 0

    def close(self):
        if self._spill is not None:
            self._spill.close()
            self._spill = None
            if self._spill_path is not None and os.path.exists(self._spill_path):
                os.remove(self._spill_path)


class Receiver:
    """Builder-side end of one (front-end, destination) connection."""

    def __init__(self, destination_id: int, version: int = PROTOCOL_VERSION):
        self.destination_id = destination_id
        self.version = version
        self.hello: Hello | None = None
        self._decoder = FrameDecoder()
        self.skipped = 0

    def feed(self, chunk: bytes) -> list[Fragment]:
        out = []
        for rec, _flags in self._decoder.feed(chunk):
            if self.hello is None:
                if not isinstance(rec, Hello):
                    raise ProtocolVersionError("connection must open with a hello record")
                if rec.version != self.version:
                    raise ProtocolVersionError(
                        f"peer speaks version {rec.version}, expected {self.version}")
                self.hello = rec
                self._ports = {p for p, d in rec.bindings if d == self.destination_id}
                continue
            if isinstance(rec, Fragment):
                if rec.port_id not in self._ports:
                    raise ForeignSource(f"port {rec.port_id} is not announced for "
                                        f"destination {self.destination_id}")
                out.append(rec)
            elif isinstance(rec, SkippedUnknown):
                self.skipped += 1
        return out


class Link:
    """Queue -> byte stream -> receiver for one (front-end, destination) pair.

    ``write`` receives the encoded bytes; by default they go straight into an
    in-process ``Receiver``.
    """

    def __init__(self, frontend_id: int, bindings: Iterable[tuple[int, int]],
                 queue: SendQueue, write: Callable[[bytes], None] | None = None):
        self.queue = queue
        self.receiver = Receiver(queue.destination_id)
        self._inbox: list[Fragment] = []
        self._write = write or self._loopback
        self._write(encode_record(Hello(PROTOCOL_VERSION, frontend_id, tuple(bindings))))

    def _loopback(self, chunk: bytes):
        self._inbox.extend(self.receiver.feed(chunk))

    def pump(self, max_items: int | None = None) -> list[Fragment]:
        """Send up to ``max_items`` queued fragments; returns what the receiver decoded."""
        sent = 0
        while max_items is None or sent < max_items:
            item = self.queue.pop()
            if item is None:
                break
            frag, spilled = item
            self._write(encode_record(frag, FLAG_SPILLED if spilled else 0))
            sent += 1
        out, self._inbox = self._inbox, []
        return out
