"""SINAD / ENOB measurement by least-squares sine fitting."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFit, NonConvergence, Unreachable
from .signal_model import AdcSpec, SineSpec, Waveform, digitize

ENOB_OFFSET_DB = 1.76
DB_PER_BIT = 6.02

MAX_ITERATIONS = 50
FREQ_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SineFit:
    amplitude_v: float
    frequency_hz: float
    phase_rad: float
    offset_v: float
    residual_rms_v: float
    converged: bool
    iterations: int

    def __call__(self, t_s):
        return self.offset_v + self.amplitude_v * np.sin(
            2.0 * np.pi * self.frequency_hz * t_s + self.phase_rad)


@dataclass
class EnobReport:
    sinad_db: float
    enob_bits: float
    spec: AdcSpec
    tone: SineSpec
    n_records: int
    per_record_enob: list = field(default_factory=list)
    per_record_sinad: list = field(default_factory=list)
    excluded_records: list = field(default_factory=list)


def _three_param(n, y, w):
    basis = np.column_stack([np.cos(w * n), np.sin(w * n), np.ones_like(n)])
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    return coef


def _refine_guess(y, w_guess, band=0.05):
    """Windowed-FFT peak near ``w_guess`` (rad/sample), Gaussian-interpolated."""
    n = len(y)
    spec = np.abs(np.fft.rfft((y - y.mean()) * np.hanning(n)))
    k_guess = w_guess * n / (2.0 * np.pi)
    lo = max(1, int(math.floor(k_guess * (1 - band))) - 1)
    hi = min(len(spec) - 2, int(math.ceil(k_guess * (1 + band))) + 1)
    if hi < lo:
        return w_guess
    k = lo + int(np.argmax(spec[lo:hi + 1]))
    if k < 1 or k + 1 >= len(spec) or spec[k] <= 0:
        return w_guess
    a, b, c = np.log(spec[k - 1:k + 2] + 1e-300)
    denom = a - 2 * b + c
    delta = 0.5 * (a - c) / denom if denom < 0 else 0.0
    return 2.0 * np.pi * (k + delta) / n


def fit_samples(t_s, y, f_guess_hz: float, *, degenerate_amplitude: float = 0.0) -> SineFit:
    """Four-parameter sine fit of samples ``y`` taken at uniform times ``t_s``.

    The guess (within +/-5 % of the tone) is sharpened on the windowed
    spectrum, a linear three-parameter fit supplies amplitude and offset, and
    frequency is then refined by linearising around the current estimate.  The fit is done in
    sample-index units for conditioning and converted back at the end.
    """
    t_s = np.asarray(t_s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] < 16:
        raise ValueError("sine fit needs a 1-D record of at least 16 samples")
    t0 = t_s[0]
    dt = (t_s[-1] - t0) / (len(t_s) - 1)
    n = np.arange(len(y), dtype=np.float64)
    w = 2.0 * np.pi * f_guess_hz * dt
    if np.ptp(y) > 0:
        w = _refine_guess(y, w)

    a, b, c = _three_param(n, y, w)
    converged = False
    iterations = 0
    scale = max(np.max(np.abs(y)), 1.0)
    if math.hypot(a, b) > max(degenerate_amplitude, 1e-12 * scale):
        for iterations in range(1, MAX_ITERATIONS + 1):
            cw, sw = np.cos(w * n), np.sin(w * n)
            basis = np.column_stack([cw, sw, np.ones_like(n), n * (b * cw - a * sw)])
            (a, b, c, dw), *_ = np.linalg.lstsq(basis, y, rcond=None)
            if not np.isfinite(dw) or not 0 < w + dw < np.pi:
                break
            w += dw
            if abs(dw / w) < FREQ_TOLERANCE:
                converged = True
                break
        # amplitude/phase consistent with the final frequency
        a, b, c = _three_param(n, y, w)

    resid = y - (a * np.cos(w * n) + b * np.sin(w * n) + c)
    freq = w / (2.0 * np.pi * dt)
    phase = math.atan2(a, b) - 2.0 * np.pi * freq * t0
    phase = math.remainder(phase, 2.0 * np.pi)
    return SineFit(amplitude_v=float(math.hypot(a, b)), frequency_hz=float(freq),
                   phase_rad=float(phase), offset_v=float(c),
                   residual_rms_v=float(np.sqrt(np.mean(resid ** 2))),
                   converged=converged, iterations=iterations)


def sine_fit(waveform: Waveform, f_guess_hz: float) -> SineFit:
    """Fit a single-channel waveform; ``converged`` is False on degenerate input."""
    if waveform.codes.ndim != 1:
        raise ValueError("sine_fit expects a single-channel waveform")
    return fit_samples(waveform.times_s(), waveform.volts(), f_guess_hz,
                       degenerate_amplitude=0.5 * waveform.spec.lsb_v)


def sinad_db(fit: SineFit) -> float:
    if fit.amplitude_v <= 0:
        raise DegenerateFit("fit amplitude is zero")
    if fit.residual_rms_v <= 0:
        raise DegenerateFit("residual is exactly zero; SINAD is unbounded")
    return 20.0 * math.log10((fit.amplitude_v / math.sqrt(2.0)) / fit.residual_rms_v)


def enob(sinad: float) -> float:
    return (sinad - ENOB_OFFSET_DB) / DB_PER_BIT


def characterize(spec: AdcSpec, tone: SineSpec, n_records: int = 16,
                 samples_per_record: int = 1 << 14, seed: int = 0) -> EnobReport:
    """Digitize and fit ``n_records`` records; SINAD from pooled residual power.

    Record ``i`` uses seed ``seed + i``.  Records whose fit does not converge
    are listed in ``excluded_records`` and left out of the aggregate.
    """
    if n_records < 1:
        raise ValueError("n_records must be >= 1")
    signal_power = []
    noise_power = []
    report = EnobReport(math.nan, math.nan, spec, tone, n_records)
    for i in range(n_records):
        wf = digitize(spec, tone, samples_per_record, seed + i)
        fit = sine_fit(wf, tone.frequency_hz)
        if not fit.converged:
            report.excluded_records.append(i)
            continue
        s = sinad_db(fit)
        report.per_record_sinad.append(s)
        report.per_record_enob.append(enob(s))
        signal_power.append(fit.amplitude_v ** 2 / 2.0)
        noise_power.append(fit.residual_rms_v ** 2)
    if not signal_power:
        raise NonConvergence(f"no record out of {n_records} converged")
    report.sinad_db = 10.0 * math.log10(sum(signal_power) / sum(noise_power))
    report.enob_bits = enob(report.sinad_db)
    return report


def calibrate_noise(spec_without_noise: AdcSpec, tone: SineSpec, target_enob: float,
                    tolerance: float = 0.05, n_records: int = 16,
                    samples_per_record: int = 1 << 14, seed: int = 0) -> float:
    """Bisect (in log sigma) for the input noise that yields ``target_enob``."""
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    spec = spec_without_noise

    def measure(sigma):
        return characterize(spec.with_noise(sigma), tone, n_records,
                            samples_per_record, seed).enob_bits

    ceiling = measure(0.0)
    if target_enob >= spec.bits or target_enob >= ceiling:
        raise Unreachable(f"target {target_enob:.3f} bits >= noise-free ENOB {ceiling:.3f}")
    lo, hi = spec.lsb_v / 100.0, spec.full_scale_v
    e_lo = measure(lo)
    if abs(e_lo - target_enob) <= tolerance:
        return lo
    if e_lo < target_enob:
        raise Unreachable("target lies between the noise-free ENOB and the bracket floor")
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        e = measure(mid)
        if abs(e - target_enob) <= tolerance:
            return mid
        if e > target_enob:
            lo = mid
        else:
            hi = mid
    raise NonConvergence("noise calibration did not reach tolerance")


def format_table(report: EnobReport, references: dict | None = None) -> str:
    s = report.spec
    out = io.StringIO()
    out.write(f"ADC model       : {s.bits}-bit, {s.sampling_rate_hz / 1e6:g} MHz, "
              f"FS +/-{s.full_scale_v:g} V, noise {s.noise_rms_v:.6g} V rms\n")
    out.write(f"tone            : {report.tone.amplitude_v:.6g} V @ "
              f"{report.tone.frequency_hz / 1e6:.6f} MHz\n")
    out.write(f"records         : {report.n_records} "
              f"(excluded: {len(report.excluded_records)})\n")
    out.write(f"{'record':>8} {'SINAD [dB]':>12} {'ENOB [bit]':>12}\n")
    for i, (sd, eb) in enumerate(zip(report.per_record_sinad, report.per_record_enob)):
        out.write(f"{i:>8d} {sd:>12.3f} {eb:>12.3f}\n")
    out.write(f"{'pooled':>8} {report.sinad_db:>12.3f} {report.enob_bits:>12.3f}\n")
    for name, value in (references or {}).items():
        out.write(f"{name:<16}: {value:.2f} bit\n")
    return out.getvalue()


def to_csv(report: EnobReport) -> str:
    included = [i for i in range(report.n_records) if i not in report.excluded_records]
    lines = ["record_index,sinad_db,enob_bits"]
    for i, sd, eb in zip(included, report.per_record_sinad, report.per_record_enob):
        lines.append(f"{i},{sd:.6f},{eb:.6f}")
    return "\n".join(lines) + "\n"
