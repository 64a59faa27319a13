"""Test-signal generation and FlashADC quantizer models."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel


@dataclass(frozen=True)
class AdcSpec:
    bits: int
    sampling_rate_hz: float
    full_scale_v: float = 1.0
    noise_rms_v: float = 0.0
    n_channels: int = 1

    def __post_init__(self):
        if not 1 <= self.bits <= 24:
            raise ValueError(f"bits must be in [1, 24], got {self.bits}")
        if self.sampling_rate_hz <= 0:
            raise ValueError("sampling_rate_hz must be positive")
        if self.full_scale_v <= 0:
            raise ValueError("full_scale_v must be positive")
        if self.noise_rms_v < 0:
            raise ValueError("noise_rms_v must be non-negative")
        if self.n_channels < 1:
            raise ValueError("n_channels must be >= 1")

    @property
    def lsb_v(self) -> float:
        return 2.0 * self.full_scale_v / (1 << self.bits)

    @property
    def mid_code(self) -> int:
        return 1 << (self.bits - 1)

    @property
    def max_code(self) -> int:
        return (1 << self.bits) - 1

    @property
    def sample_period_ps(self) -> int:
        return round(1e12 / self.sampling_rate_hz)

    def with_noise(self, noise_rms_v: float) -> "AdcSpec":
        return AdcSpec(self.bits, self.sampling_rate_hz, self.full_scale_v,
                       noise_rms_v, self.n_channels)


@dataclass(frozen=True)
class SineSpec:
    amplitude_v: float
    frequency_hz: float
    phase_rad: float = 0.0
    offset_v: float = 0.0

    def __post_init__(self):
        if self.amplitude_v < 0:
            raise ValueError("amplitude_v must be non-negative")
        if self.frequency_hz <= 0:
            raise ValueError("frequency_hz must be positive")

    def __call__(self, t_s):
        return self.offset_v + self.amplitude_v * np.sin(
            2.0 * np.pi * self.frequency_hz * t_s + self.phase_rad)


@dataclass(frozen=True, eq=False)
class Waveform:
    """A block of digitized codes.

    ``codes`` is 1-D for a single channel or ``(n_channels, n_samples)``.
    """
    codes: np.ndarray
    t0_ps: int
    sample_period_ps: int
    spec: AdcSpec = field(repr=False)

    @property
    def n_samples(self) -> int:
        return self.codes.shape[-1]

    def times_s(self) -> np.ndarray:
        n = np.arange(self.n_samples, dtype=np.float64)
        return (self.t0_ps + n * self.sample_period_ps) * 1e-12

    def volts(self) -> np.ndarray:
        """Codes mapped back to the centre of their quantization bin."""
        return (self.codes.astype(np.float64) - self.spec.mid_code) * self.spec.lsb_v

    def __eq__(self, other):
        if not isinstance(other, Waveform):
            return NotImplemented
        return (self.t0_ps == other.t0_ps
                and self.sample_period_ps == other.sample_period_ps
                and self.spec == other.spec
                and self.codes.shape == other.codes.shape
                and bool(np.array_equal(self.codes, other.codes)))

    __hash__ = None


def _sample(spec: AdcSpec, signal, n_samples: int, seed, t0_ps: int) -> Waveform:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    period = spec.sample_period_ps
    # exact sample instants from the nominal rate; the ps period is only the
    # integer label carried by the Waveform
    t = t0_ps * 1e-12 + np.arange(n_samples, dtype=np.float64) / spec.sampling_rate_hz
    v = signal(t)
    if spec.noise_rms_v > 0:
        rng = np.random.default_rng(seed)
        v = v + rng.normal(0.0, spec.noise_rms_v, n_samples)
    codes = _accel.quantize(v, spec.lsb_v, spec.bits)
    return Waveform(codes, t0_ps, period, spec)


def digitize(spec: AdcSpec, sine: SineSpec, n_samples: int, seed=None,
             t0_ps: int = 0) -> Waveform:
    """Sample ``sine`` plus input-referred Gaussian noise through the quantizer."""
    return _sample(spec, sine, n_samples, seed, t0_ps)


def digitize_dc(spec: AdcSpec, level_v: float, n_samples: int, seed=None,
                t0_ps: int = 0) -> Waveform:
    return _sample(spec, lambda t: np.full(t.shape, float(level_v)), n_samples, seed, t0_ps)


def coherent_cycles(n_samples: int, fraction: float = 0.1) -> int:
    """Odd cycle count J near ``fraction * n_samples`` with gcd(J, N) = 1."""
    j = max(1, int(round(fraction * n_samples)))
    if j % 2 == 0:
        j -= 1
    j = max(j, 1)
    while math.gcd(j, n_samples) != 1:
        j -= 2
    return j


def coherent_tone(spec: AdcSpec, n_samples: int, level: float = 0.95,
                  fraction: float = 0.1, phase_rad: float = 0.0) -> SineSpec:
    """Test tone at ``level`` of full scale, coherent with an ``n_samples`` record.

    The default level of 0.95 is -0.45 dBFS.
    """
    j = coherent_cycles(n_samples, fraction)
    return SineSpec(level * spec.full_scale_v, j * spec.sampling_rate_hz / n_samples,
                    phase_rad, 0.0)


def full_scale_tone(spec: AdcSpec, n_samples: int, fraction: float = 0.1) -> SineSpec:
    """Largest coherent tone that stays half an lsb inside the rails."""
    level = 1.0 - 0.5 * spec.lsb_v / spec.full_scale_v
    return coherent_tone(spec, n_samples, level=level, fraction=fraction)


def pedestal_block(spec: AdcSpec, key: int, start_index: int, n_samples: int,
                   spread_codes: int = 4) -> Waveform:
    """Baseline-plus-noise block for every channel, addressable by sample index.

    Channel ``c`` draws from the counter stream ``key + c``; regenerating the
    same index range always gives the same codes.
    """
    period = spec.sample_period_ps
    codes = np.empty((spec.n_channels, n_samples), dtype=np.int64)
    mid = spec.mid_code
    spread = min(spread_codes, mid - 1) if mid > 1 else 0
    for ch in range(spec.n_channels):
        codes[ch] = _accel.pedestal((key + ch) & 0xFFFFFFFFFFFFFFFF, start_index,
                                    n_samples, mid, spread)
    return Waveform(codes, start_index * period, period, spec)
