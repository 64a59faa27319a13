import sys

import numpy as np
import pytest

from mhdaq.frontend import Fragment


def make_fragment(rng, frontend_id=None, port_id=None, seq_no=None, timestamp=None,
                  n_channels=None, n_samples=None):
    n_channels = int(rng.integers(1, 4)) if n_channels is None else n_channels
    n_samples = int(rng.integers(1, 40)) if n_samples is None else n_samples
    chans = tuple((int(cid), rng.integers(0, 1 << 16, n_samples).astype(np.uint16))
                  for cid in rng.choice(1 << 16, n_channels, replace=False))
    return Fragment(
        int(rng.integers(0, 1 << 16)) if frontend_id is None else frontend_id,
        int(rng.integers(0, 256)) if port_id is None else port_id,
        int(rng.integers(0, 1 << 64, dtype=np.uint64)) if seq_no is None else seq_no,
        int(rng.integers(0, 1 << 64, dtype=np.uint64)) if timestamp is None else timestamp,
        chans)


def simple_fragment(fe, port, seq, ts, n=4):
    return Fragment(fe, port, seq, ts, ((0, np.arange(n, dtype=np.uint16) + seq % 100),))


@pytest.fixture
def rng():
    return np.random.default_rng(20180621)


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is not None and acc.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acc.RESULTS, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
