import socket
import struct
import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mhdaq.errors import (ForeignSource, LengthMismatch, ProtocolVersionError,
                          TruncatedRecord)
from mhdaq.frontend import Fragment
from mhdaq.transport import (FLAG_SPILLED, EndOfRun, EventRecord, FrameDecoder, Hello, Link,
                             Receiver, RunHeader, SendQueue, SkippedUnknown, SyncMarker,
                             decode_record, encode_fragment, encode_record, iter_records)

from conftest import make_fragment, simple_fragment

# fe:u16 port:u8 reserved:u8 seq:u64 ts:u64 n_channels:u16 samples:u32
FIXED = 2 + 1 + 1 + 8 + 8 + 2 + 4


def test_one_sample_fragment_layout():
    f = Fragment(3, 1, 0, 1000, ((0, np.array([2048], dtype=np.uint16)),))
    frame = encode_fragment(f)
    payload_len = FIXED + 2 + 2  # one channel id plus one u16 sample
    assert payload_len == 30
    assert len(frame) == 6 + payload_len
    assert frame[:6] == struct.pack("<BBI", 1, 0, payload_len)
    assert frame[6:8] == (3).to_bytes(2, "little")
    assert frame[-2:] == (2048).to_bytes(2, "little")


def test_round_trip_example():
    f = Fragment(3, 1, 0, 1000, ((0, np.array([2048], dtype=np.uint16)),))
    rec, nxt = decode_record(encode_fragment(f))
    assert rec == f and nxt == 36


def test_truncated():
    frame = encode_fragment(simple_fragment(1, 1, 0, 0))
    for cut in (0, 3, 6, len(frame) - 1):
        with pytest.raises(TruncatedRecord):
            decode_record(frame[:cut])


def test_unknown_type_is_skipped():
    data = bytes([0x7F, 0, 5, 0, 0, 0]) + b"abcde"
    good = encode_fragment(simple_fragment(1, 1, 0, 0))
    rec, nxt = decode_record(data + good)
    assert isinstance(rec, SkippedUnknown) and nxt == 11
    assert decode_record(data + good, nxt)[0] == simple_fragment(1, 1, 0, 0)
    assert encode_record(rec) == data


def test_length_mismatch():
    frame = bytearray(encode_fragment(simple_fragment(1, 1, 0, 0, n=4)))
    # claim 5 samples per channel while the frame still carries 4
    struct.pack_into("<I", frame, 6 + 22, 5)
    with pytest.raises(LengthMismatch):
        decode_record(bytes(frame))
    with pytest.raises(LengthMismatch):
        decode_record(struct.pack("<BBI", 0x05, 0, 4) + b"\0" * 4)


@pytest.mark.parametrize("rec", [
    RunHeader(7, 123456789, 2),
    SyncMarker(-5, 10 ** 12),
    Hello(1, 4, ((1, 1), (2, 2))),
    EndOfRun(42),
    EventRecord(1, 9, True, (simple_fragment(0, 1, 9, 5), simple_fragment(1, 1, 9, 6))),
])
def test_other_records_round_trip(rec):
    data = encode_record(rec)
    assert decode_record(data) == (rec, len(data))


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_fragment_round_trip_property(seed):
    f = make_fragment(np.random.default_rng(seed))
    data = encode_fragment(f)
    back, n = decode_record(data)
    assert back == f and n == len(data)
    assert encode_fragment(back) == data


def test_stream_decoder_any_chunking(rng):
    frags = [make_fragment(rng) for _ in range(50)]
    data = b"".join(encode_fragment(f) for f in frags)
    cuts = np.sort(rng.integers(0, len(data), 40))
    dec, got, prev = FrameDecoder(), [], 0
    for c in list(cuts) + [len(data)]:
        got += [r for r, _ in dec.feed(data[prev:c])]
        prev = c
    assert got == frags and dec.buffered == 0
    assert list(iter_records(data)) == frags


def test_hello_version_mismatch():
    r = Receiver(1)
    with pytest.raises(ProtocolVersionError):
        r.feed(encode_record(Hello(2, 0, ((1, 1),))))
    with pytest.raises(ProtocolVersionError):
        Receiver(1).feed(encode_fragment(simple_fragment(0, 1, 0, 0)))


def test_receiver_rejects_foreign_port():
    r = Receiver(1)
    r.feed(encode_record(Hello(1, 0, ((1, 1), (2, 2)))))
    assert r.feed(encode_fragment(simple_fragment(0, 1, 0, 0)))
    with pytest.raises(ForeignSource):
        r.feed(encode_fragment(simple_fragment(0, 2, 0, 0)))


def test_queue_enqueue_then_spill(tmp_path):
    q = SendQueue(1, bound=2, spill_path=tmp_path / "s.spill")
    assert [q.submit(simple_fragment(0, 1, i, i)) for i in range(3)] == \
        ["enqueued", "enqueued", "spilled"]
    out = [q.pop() for _ in range(3)]
    assert [(f.seq_no, s) for f, s in out] == [(0, False), (1, False), (2, True)]
    assert q.pop() is None
    q.close()
    assert not (tmp_path / "s.spill").exists()


def test_slow_consumer_preserves_order_and_multiset(rng, tmp_path):
    q = SendQueue(1, bound=10, spill_path=tmp_path / "q.spill")
    sent, got = [], []
    for i in range(10_000):
        f = simple_fragment(int(rng.integers(0, 3)), 1, i, i)
        sent.append(f)
        q.submit(f)
        if i % 7 == 0:  # consumer at one seventh of the producer rate
            got.append(q.pop()[0])
    while (item := q.pop()) is not None:
        got.append(item[0])
    assert q.spilled > 0
    assert [f.seq_no for f in got] == [f.seq_no for f in sent]
    assert got == sent
    assert q.enqueued + q.spilled == q.delivered == 10_000


def test_submit_never_blocks():
    q = SendQueue(1, bound=1)
    f = simple_fragment(0, 1, 0, 0, n=64)
    worst = 0.0
    for _ in range(5000):
        t = time.perf_counter()
        q.submit(f)
        worst = max(worst, time.perf_counter() - t)
    assert len(q) == 5000 and worst < 0.5
    q.close()


def test_link_loopback_flags_spilled():
    q = SendQueue(1, bound=1)
    link = Link(0, ((1, 1),), q)
    frames = []
    inner = link._write
    link._write = lambda b: (frames.append(b), inner(b))
    for i in range(3):
        q.submit(simple_fragment(0, 1, i, i))
    out = link.pump()
    assert [f.seq_no for f in out] == [0, 1, 2]
    assert [fr[1] & FLAG_SPILLED for fr in frames] == [0, 1, 1]


def test_socket_loopback(rng):
    a, b = socket.socketpair()
    frags = [make_fragment(rng, port_id=1) for _ in range(500)]
    received = []

    def consume():
        r = Receiver(1)
        while True:
            chunk = b.recv(4096)
            if not chunk:
                break
            received.extend(r.feed(chunk))

    t = threading.Thread(target=consume)
    t.start()
    q = SendQueue(1, bound=16)
    link = Link(7, ((1, 1),), q, write=a.sendall)
    for i, f in enumerate(frags):
        q.submit(f)
        if i % 3 == 0:
            link.pump(1)
    link.pump()
    a.close()
    t.join(timeout=30)
    b.close()
    assert received == frags
