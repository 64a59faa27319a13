"""Named ADC models.

``noise_rms_v`` values were obtained with ``calibrate_noise`` (tolerance
0.001 bit, 16 x 2**14 samples, seed 0, 0.95 FS coherent tone) against the
measured ENOB in ``target_enob``.  ``datasheet_enob`` is the vendor figure.
"""
from dataclasses import dataclass

from .signal_model import AdcSpec


@dataclass(frozen=True)
class AdcPreset:
    name: str
    spec: AdcSpec
    target_enob: float
    datasheet_enob: float


PRESETS = {
    "cosmoz-125m": AdcPreset(
        "cosmoz-125m",
        AdcSpec(bits=12, sampling_rate_hz=125e6, full_scale_v=1.0,
                noise_rms_v=5.925442524453123e-05, n_channels=8),
        target_enob=11.8, datasheet_enob=12.0),
    "sub-1g": AdcPreset(
        "sub-1g",
        AdcSpec(bits=16, sampling_rate_hz=1e9, full_scale_v=1.0,
                noise_rms_v=2.1749307854589017e-04, n_channels=2),
        target_enob=11.3, datasheet_enob=11.8),
}
