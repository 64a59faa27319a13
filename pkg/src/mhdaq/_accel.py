"""Hot numeric kernels.

Each kernel exists twice: a vectorised numpy version and an explicit loop
that numba compiles with ``@njit``.  The loop versions are used when numba
imports and ``MHDAQ_NO_NUMBA`` is unset (or ``0``); otherwise the numpy
versions are bound.  ``benchmarks/bench_kernels.py`` times both.
"""
import os

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

USE_NUMBA = HAVE_NUMBA and os.environ.get("MHDAQ_NO_NUMBA", "0") in ("", "0")

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


# -- mid-tread quantizer ---------------------------------------------------

def quantize_numpy(volts, lsb, bits):
    """Offset-binary mid-tread quantizer with saturation."""
    top = (1 << bits) - 1
    codes = np.rint(np.asarray(volts, dtype=np.float64) / lsb) + (1 << (bits - 1))
    return np.clip(codes, 0, top).astype(np.int64)


def quantize_loop(volts, lsb, bits):
    top = (1 << bits) - 1
    mid = 1 << (bits - 1)
    out = np.empty(volts.shape[0], dtype=np.int64)
    for i in range(volts.shape[0]):
        c = np.rint(volts[i] / lsb) + mid
        if c < 0:
            c = 0
        elif c > top:
            c = top
        out[i] = np.int64(c)
    return out


# -- counter-based pedestal noise -----------------------------------------
# splitmix64 of (key, sample index): random access by sample index, so a
# block can be regenerated without replaying the stream from zero.

def pedestal_numpy(key, start, n, mid, spread):
    idx = np.arange(start, start + n, dtype=np.uint64)
    z = np.uint64(key) + idx * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    z = z ^ (z >> np.uint64(31))
    width = np.uint64(2 * spread + 1)
    return (z % width).astype(np.int64) + (mid - spread)


def pedestal_loop(key, start, n, mid, spread):
    out = np.empty(n, dtype=np.int64)
    k = np.uint64(key)
    width = np.uint64(2 * spread + 1)
    base = mid - spread
    for i in range(n):
        z = k + np.uint64(start + i) * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
        out[i] = np.int64(z % width) + base
    return out


# -- non-paralyzable dead-time scan ---------------------------------------

def legacy_scan_numpy(ticks, dead_ticks):
    """Accept mask for a sorted trigger stream through a non-paralyzable gate.

    The recurrence is inherently sequential; this version walks Python ints.
    """
    accepted = np.zeros(len(ticks), dtype=np.bool_)
    busy_until = 0
    for i, t in enumerate(np.asarray(ticks, dtype=np.int64).tolist()):
        if t >= busy_until:
            accepted[i] = True
            busy_until = t + dead_ticks
    return accepted


def legacy_scan_loop(ticks, dead_ticks):
    accepted = np.zeros(ticks.shape[0], dtype=np.bool_)
    busy_until = 0
    for i in range(ticks.shape[0]):
        if ticks[i] >= busy_until:
            accepted[i] = True
            busy_until = ticks[i] + dead_ticks
    return accepted


if HAVE_NUMBA:
    quantize_jit = njit(cache=True)(quantize_loop)
    pedestal_jit = njit(cache=True)(pedestal_loop)
    legacy_scan_jit = njit(cache=True)(legacy_scan_loop)
else:  # pragma: no cover
    quantize_jit = quantize_loop
    pedestal_jit = pedestal_loop
    legacy_scan_jit = legacy_scan_loop


def quantize(volts, lsb, bits):
    volts = np.ascontiguousarray(volts, dtype=np.float64)
    if USE_NUMBA:
        return quantize_jit(volts, float(lsb), int(bits))
    return quantize_numpy(volts, lsb, bits)


def pedestal(key, start, n, mid, spread):
    if USE_NUMBA:
        return pedestal_jit(np.uint64(key), int(start), int(n), int(mid), int(spread))
    return pedestal_numpy(key, start, n, mid, spread)


def legacy_scan(ticks, dead_ticks):
    ticks = np.ascontiguousarray(ticks, dtype=np.int64)
    if USE_NUMBA:
        return legacy_scan_jit(ticks, int(dead_ticks))
    return legacy_scan_numpy(ticks, dead_ticks)
