"""Time the numba and pure-numpy paths of each hot kernel.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both paths are called directly, so ``MHDAQ_NO_NUMBA`` does not matter here.
The outputs are compared before timing.
"""
import argparse
import timeit

import numpy as np

from mhdaq import _accel


def cases(rng):
    volts = rng.normal(0.0, 0.4, 1 << 20)
    ticks = np.cumsum(rng.exponential(1e8 / 3000, 200_000)).astype(np.int64)
    return {
        "quantize (1M samples)": (
            lambda: _accel.quantize_numpy(volts, 2 / 4096, 12),
            lambda: _accel.quantize_jit(volts, 2 / 4096, 12)),
        "pedestal (1M samples)": (
            lambda: _accel.pedestal_numpy(7, 123_456, 1 << 20, 2048, 4),
            lambda: _accel.pedestal_jit(7, 123_456, 1 << 20, 2048, 4)),
        "legacy_scan (200k triggers)": (
            lambda: _accel.legacy_scan_numpy(ticks, 20_000),
            lambda: _accel.legacy_scan_jit(ticks, 20_000)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; only the numpy path is available")
    print(f"{'kernel':<30}{'numpy [ms]':>12}{'numba [ms]':>12}{'speed-up':>10}")
    for name, (py, jit) in cases(np.random.default_rng(0)).items():
        assert np.array_equal(py(), jit()), name  # also compiles the jit path
        t_py = min(timeit.repeat(py, number=1, repeat=args.repeat)) * 1e3
        t_jit = min(timeit.repeat(jit, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<30}{t_py:>12.2f}{t_jit:>12.2f}{t_py / t_jit:>9.1f}x")


if __name__ == "__main__":
    main()
