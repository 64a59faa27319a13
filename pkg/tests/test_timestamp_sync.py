from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from mhdaq.errors import NonMonotonicSync, Unsynchronized
from mhdaq.timestamp_sync import (ClockModel, SyncState, apply_sync_pulse, global_to_local,
                                  local_to_global, ps_to_ticks)

S = 10 ** 12


def synced(clock, pulses_global):
    st_ = SyncState(0)
    for g in pulses_global:
        st_ = apply_sync_pulse(st_, clock.local_ps(g), g)
    return st_


def test_identity_examples():
    s = apply_sync_pulse(SyncState(0), 0, 0)
    assert local_to_global(s, 10_000) == 1
    assert local_to_global(s, 15_000) == 2
    assert local_to_global(s, 25_000) == 2


def test_ps_to_ticks_half_even():
    assert [ps_to_ticks(x) for x in (4_999, 5_000, 5_001, 15_000, 25_000, 35_000)] == \
        [0, 0, 1, 2, 2, 4]
    assert ps_to_ticks(15_000.0) == 2


def test_first_pulse():
    s = apply_sync_pulse(SyncState(3), 0, 0)
    assert s.estimated_offset_ps == 0 and s.estimated_rate == 1.0 and s.n_pulses == 1


def test_rate_from_two_pulses():
    clock = ClockModel(0, 10.0)
    s = synced(clock, [0, S])
    assert s.estimated_rate == pytest.approx(1.00001, abs=1e-9)


def test_out_of_order_pulse():
    s = apply_sync_pulse(SyncState(0), 0, S)
    with pytest.raises(NonMonotonicSync):
        apply_sync_pulse(s, 1, S)
    with pytest.raises(NonMonotonicSync):
        apply_sync_pulse(s, 1, S - 1)


def test_unsynchronized():
    with pytest.raises(Unsynchronized):
        local_to_global(SyncState(0), 5)
    with pytest.raises(Unsynchronized):
        global_to_local(SyncState(0), 5)


def _true_ticks(clock, local_ps):
    # exact rational inverse of the clock model
    g = (Fraction(local_ps) - clock.offset_ps) / (1 + Fraction(clock.drift_ppm) / 10 ** 6)
    return g / 10_000


def test_drift_error_half_interval_after_pulse():
    clock = ClockModel(777_777, 10.0)
    s = synced(clock, [0, S])
    g = S + S // 2
    local = clock.local_ps(g)
    assert abs(local_to_global(s, local) - _true_ticks(clock, local)) <= 1


@settings(max_examples=200, deadline=None)
@given(st.floats(-100, 100), st.integers(-10**9, 10**9), st.integers(0, 10**6 - 1),
       st.integers(1, 60))
def test_one_tick_after_sync(drift, offset, frac, k):
    clock = ClockModel(offset, drift)
    s = synced(clock, [(k - 1) * S, k * S])
    g = k * S + frac * 10 ** 6  # anywhere within the following interval
    local = clock.local_ps(g)
    assert abs(local_to_global(s, local) - _true_ticks(clock, local)) <= 1


@settings(max_examples=200, deadline=None)
@given(st.floats(-100, 100), st.floats(-100, 100), st.integers(-10**9, 10**9),
       st.integers(-10**9, 10**9), st.integers(0, S - 1))
def test_two_frontends_agree(d1, d2, o1, o2, g):
    c1, c2 = ClockModel(o1, d1), ClockModel(o2, d2)
    s1, s2 = synced(c1, [-S, 0]), synced(c2, [-S, 0])
    t1 = local_to_global(s1, c1.local_ps(g))
    t2 = local_to_global(s2, c2.local_ps(g))
    assert abs(t1 - t2) <= 1


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**8), st.integers(0, 10**8))
def test_identity_on_tick_boundaries_and_monotone(a, b):
    s = apply_sync_pulse(SyncState(0), 0, 0)
    assert local_to_global(s, a * 10_000) == a
    lo, hi = sorted((a, b))
    assert local_to_global(s, lo * 37) <= local_to_global(s, hi * 37)


def test_drift_guardrail():
    with pytest.raises(ValueError):
        ClockModel(0, 100.5)
