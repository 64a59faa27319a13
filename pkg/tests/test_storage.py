import warnings

import numpy as np
import pytest

from mhdaq.errors import BadMagic, ClockSkewWarning, TruncatedRecord, UnsortedInput, \
    UnsupportedVersion
from mhdaq.event_builder import BuilderConfig, EventBuilder
from mhdaq.frontend import Fragment
from mhdaq.storage import (MAGIC, PREAMBLE_SIZE, CoincidenceWindow, RunFile, dump_lines,
                           parse_run, read_run, replay_merge, write_run)
from mhdaq.transport import EndOfRun, RunHeader, SyncMarker, encode_record

from conftest import make_fragment, simple_fragment


def test_empty_stream(tmp_path):
    p = tmp_path / "e.mhdq"
    write_run(p, [], run_id=3, frontend_id=4, epoch_ns=5)
    data = p.read_bytes()
    assert data == (MAGIC + (1).to_bytes(2, "little") + encode_record(RunHeader(3, 5, 4))
                    + encode_record(EndOfRun(0)))
    run = read_run(p)
    assert run.records == [] and run.end == EndOfRun(0)


def test_thousand_fragments_round_trip(tmp_path, rng):
    recs = [make_fragment(rng) for _ in range(1000)]
    recs.insert(500, SyncMarker(123, 456))
    p = tmp_path / "r.mhdq"
    write_run(p, recs, run_id=1, frontend_id=2, epoch_ns=10 ** 18)
    run = read_run(p)
    assert run.records == recs and run.end.n_records == 1001
    assert run.to_bytes() == p.read_bytes()


def test_deterministic(tmp_path, rng):
    recs = [make_fragment(rng) for _ in range(50)]
    write_run(tmp_path / "a.mhdq", recs, epoch_ns=99)
    write_run(tmp_path / "b.mhdq", recs, epoch_ns=99)
    assert (tmp_path / "a.mhdq").read_bytes() == (tmp_path / "b.mhdq").read_bytes()


def test_bad_magic_and_version(tmp_path):
    p = tmp_path / "x.mhdq"
    write_run(p, [simple_fragment(0, 1, 0, 0)])
    data = p.read_bytes()
    with pytest.raises(BadMagic):
        parse_run(b"XXXX" + data[4:])
    with pytest.raises(UnsupportedVersion):
        parse_run(data[:4] + (2).to_bytes(2, "little") + data[PREAMBLE_SIZE:])
    with pytest.raises(TruncatedRecord):
        parse_run(data[:-3])


def test_dump_one_line_per_record(tmp_path):
    p = tmp_path / "d.mhdq"
    write_run(p, [simple_fragment(0, 1, 0, 7), SyncMarker(1, 2)])
    lines = dump_lines(read_run(p))
    assert len(lines) == 4
    assert "ts=7" in lines[1] and "port=1" in lines[1] and "seq=0" in lines[1]


def _run(frags):
    return RunFile(RunHeader(0, 0, frags[0].frontend_id if frags else 0), list(frags))


A, B = 1, 2


def test_replay_window_ten():
    res = replay_merge([_run([simple_fragment(1, A, 0, 1000)]),
                        _run([simple_fragment(2, A, 0, 1005)])], CoincidenceWindow(10), {A})
    assert len(res.events) == 1 and len(res.events[0].fragments) == 2
    assert res.unmatched == []


@pytest.mark.parametrize("port2", [A, B])
def test_replay_window_four(port2):
    f1, f2 = simple_fragment(1, A, 0, 1000), simple_fragment(2, port2, 0, 1005)
    res = replay_merge([_run([f1]), _run([f2])], 4, {A})
    opening = [e for e in res.events if e.fragments[0] == f1]
    assert len(opening) == 1 and len(opening[0].fragments) == 1
    assert res.unmatched == [f1, f2]


def test_replay_earliest_opening_wins():
    # FE3's fragment is inside both clusters' windows; it joins the first one
    res = replay_merge([_run([simple_fragment(1, A, 0, 1000), simple_fragment(1, A, 1, 1012)]),
                        _run([simple_fragment(3, B, 0, 1008)])], 10, {A})
    assert [len(e.fragments) for e in res.events] == [2, 1]


def test_replay_sorted_output_and_conservation(rng):
    runs = []
    for fe in range(3):
        ts = np.sort(rng.integers(0, 100_000, 300))
        runs.append(_run([simple_fragment(fe, 1 + int(rng.integers(0, 2)), i, int(t))
                          for i, t in enumerate(ts)]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClockSkewWarning)
        res = replay_merge(runs, 50, {1})
    opens = [(e.build_timestamp, e.key.port_id, e.key.seq_no) for e in res.events]
    n = sum(len(e.fragments) for e in res.events) + len(res.orphans)
    assert n == 900
    ids = [(f.frontend_id, f.seq_no) for e in res.events for f in e.fragments] + \
        [(f.frontend_id, f.seq_no) for f in res.orphans]
    assert len(set(ids)) == 900
    assert [e.fragments and min(f.timestamp for f in e.fragments) for e in res.events] == \
        [o[0] for o in opens]


def test_replay_unsorted():
    with pytest.raises(UnsortedInput):
        replay_merge([_run([simple_fragment(1, A, 0, 10), simple_fragment(1, A, 1, 5)])])


def test_clock_skew_warning():
    runs = [_run([simple_fragment(1, A, 0, 1000)]), _run([simple_fragment(2, B, 0, 995)]),
            _run([simple_fragment(3, B, 0, 1008)])]
    with pytest.warns(ClockSkewWarning):
        res = replay_merge(runs, 10, {A})
    assert len(res.events[0].fragments) == 3


def test_replay_matches_online_builder(rng):
    # three front-ends see every trigger with up to 3 ticks of disagreement
    per_fe = {fe: [] for fe in (1, 2, 3)}
    cfg = BuilderConfig({A: frozenset({1, 2, 3}), B: frozenset({1, 2, 3})})
    b = EventBuilder(cfg)
    online = []
    seq = {A: 0, B: 0}
    t = 0
    for _ in range(2000):
        t += int(rng.integers(20, 5000))
        port = A if rng.random() < 0.5 else B
        for fe in (1, 2, 3):
            f = simple_fragment(fe, port, seq[port], t + int(rng.integers(0, 4)))
            per_fe[fe].append(f)
            online += b.submit_fragment(f)
        seq[port] += 1
    for frs in per_fe.values():
        frs.sort(key=lambda f: f.timestamp)
    res = replay_merge([_run(v) for v in per_fe.values()], 4, {A, B})
    assert sorted(e.grouping() for e in res.events) == sorted(e.grouping() for e in online)
    assert res.unmatched == []
