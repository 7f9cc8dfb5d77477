"""Pipeline configuration: one flat document holding every tunable.

The shipped defaults reproduce the reference parameterization (wide/narrow
Hampel windows of 2000/50 samples at 0.01 sigma, factor-20 decimation,
80 % variance selection, 0.08-1 Hz and 1-2 Hz bands, four db4 levels).
Unknown keys are rejected on load so typos fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .errors import ValidationError


@dataclass(frozen=True)
class Config:
    # Hampel preprocessing
    trend_window: int = 2000
    trend_threshold: float = 0.01
    denoise_window: int = 50
    denoise_threshold: float = 0.01
    downsample_factor: int = 20
    # subcarrier / beam selection
    variance_fraction: float = 0.8
    nve_window_s: float = 0.25
    power_gate_db: float = 6.0
    # estimation bands and filters
    breath_lo: float = 0.08
    breath_hi: float = 1.0
    heart_lo: float = 1.0
    heart_hi: float = 2.0
    fir_taps: int = 201
    dwt_levels: int = 4
    dwt_wavelet: str = "db4"
    peak_prominence: float = 0.2
    interval_dispersion: float = 0.4
    fft_size: int = 4096
    peak_power_threshold: float = 0.5
    kmeans_seed: int = 0
    # delay-domain analysis
    pdp_zero_pad: int = 4096
    delay_offset_m: float = 0.0
    # calibration
    calib_threshold: float = 0.02
    calib_trend_window: int = 31
    calib_min_model_rms: float = 0.01
    rloess_enabled: bool = False
    rloess_span: float = 0.1
    lm_max_iter: int = 200
    lm_step_tol: float = 1e-10
    # pipeline fits stop refining three orders below the 0.02 rad
    # compensation target; the bare fitting op defaults to 1e-12
    lm_obj_tol: float = 1e-9

    def __post_init__(self):
        if self.downsample_factor < 1:
            raise ValidationError("downsample_factor must be >= 1")
        if not 0 < self.variance_fraction < 1:
            raise ValidationError("variance_fraction must lie in (0, 1)")
        if not 0 < self.breath_lo < self.breath_hi:
            raise ValidationError("invalid breath band")
        if not 0 < self.heart_lo < self.heart_hi:
            raise ValidationError("invalid heart band")
        if not 0 < self.peak_power_threshold < 1:
            raise ValidationError("peak_power_threshold must lie in (0, 1)")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "Config":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValidationError(f"config is not valid JSON: {e}") from e
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object")
        known = {f.name for f in fields(Config)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return Config(**doc)

    @staticmethod
    def from_file(path) -> "Config":
        with open(path, "r", encoding="utf-8") as f:
            return Config.from_json(f.read())
