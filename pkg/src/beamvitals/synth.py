"""Synthetic CSI generator: chest-motion phase model plus hardware impairments.

The generator is the ground-truth oracle for the estimation pipeline.  A
target at mean path distance D with breathing amplitude a_b and heartbeat
amplitude a_h modulates the per-subcarrier phase as

    phase(t, f) = 2*pi * d(t) / lambda_f,
    d(t) = D + a_b*cos(2*pi*f_b*t) + a_h*cos(2*pi*f_h*t)

where D is the full back-scattered path length (twice the physical
distance in a monostatic layout).  Impairment fields describe the phase
shift ADDED to the measured phase; the calibration module removes them.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .beams import fspl
from .capture import CaptureMeta, CsiCapture
from .errors import ValidationError

C_LIGHT = 299_792_458.0

DEFAULT_TX_POWER_DBM = 15.0
DEFAULT_ANTENNA_GAIN_DB = 31.0

# Chest displacement defaults (path amplitudes, meters).  Configuration
# values, not measured claims.
DEFAULT_BREATH_AMP = 5e-3
DEFAULT_HEART_AMP = 5e-4


@dataclass(frozen=True)
class TargetSpec:
    """One breathing person in the scene.

    ``mean_distance`` is the total back-scattered path length D; use twice
    the person-to-transceiver distance for a monostatic layout.  Beam id
    sets are 1-based.
    """

    mean_distance: float
    breath_rate: float
    heart_rate: float
    breath_amp: float = DEFAULT_BREATH_AMP
    heart_amp: float = DEFAULT_HEART_AMP
    rx_beams_hit: frozenset = field(default_factory=frozenset)
    tx_beams_hit: frozenset = field(default_factory=frozenset)
    reflect_coeff: float = 0.35

    def __post_init__(self):
        object.__setattr__(self, "rx_beams_hit", frozenset(self.rx_beams_hit))
        object.__setattr__(self, "tx_beams_hit", frozenset(self.tx_beams_hit))
        if not 0.08 <= self.breath_rate <= 1.0:
            raise ValidationError(
                f"breath_rate {self.breath_rate} outside physiological band [0.08, 1.0] Hz")
        if not 1.0 <= self.heart_rate <= 2.0:
            raise ValidationError(
                f"heart_rate {self.heart_rate} outside physiological band [1.0, 2.0] Hz")
        if not self.breath_amp > self.heart_amp > 0:
            raise ValidationError("need breath_amp > heart_amp > 0")
        if self.mean_distance <= 0:
            raise ValidationError("mean_distance must be positive")
        if not 0 < self.reflect_coeff <= 1:
            raise ValidationError("reflect_coeff must lie in (0, 1]")
        if not self.rx_beams_hit or not self.tx_beams_hit:
            raise ValidationError("target must hit at least one rx and one tx beam")


@dataclass(frozen=True)
class ImpairmentSpec:
    """Receiver phase-error model, expressed as shifts added to measured phase.

    ``sfo_slope`` grows linearly with the subcarrier index, ``cpo`` is a
    constant offset, and the IQ triple (gain, phase, time offset) produces
    the arctan-shaped nonlinearity.  ``affected_symbols`` is the fraction
    of symbols the error burst touches.
    """

    sfo_slope: float = 0.0
    cpo: float = 0.0
    iq_gain_mismatch: float = 1.0
    iq_phase_mismatch: float = 0.0
    iq_time_offset: float = 0.0
    awgn_snr: float = math.inf
    affected_symbols: float = 0.0

    def __post_init__(self):
        if self.iq_gain_mismatch <= 0:
            raise ValidationError("iq_gain_mismatch must be positive")
        if not 0.0 <= self.affected_symbols <= 1.0:
            raise ValidationError("affected_symbols must lie in [0, 1]")
        for name in ("sfo_slope", "cpo", "iq_phase_mismatch", "iq_time_offset"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")

    @property
    def is_null(self) -> bool:
        return (self.sfo_slope == 0 and self.cpo == 0 and self.iq_gain_mismatch == 1
                and self.iq_phase_mismatch == 0 and self.iq_time_offset == 0
                and self.affected_symbols == 0)


NO_IMPAIRMENTS = ImpairmentSpec()


@dataclass(frozen=True)
class ScenarioSpec:
    """Full description of a synthetic capture; the seed fixes all randomness."""

    meta: CaptureMeta
    targets: tuple
    impairments: ImpairmentSpec = NO_IMPAIRMENTS
    rng_seed: int = 0
    tx_power_dbm: float = DEFAULT_TX_POWER_DBM
    antenna_gain_db: float = DEFAULT_ANTENNA_GAIN_DB
    diffuse_jitter_sigma: float = 0.0
    # static direct-path gain in dB relative to the strongest target echo;
    # None models pure back-scatter.  A bistatic link always carries the
    # direct TX->RX path, and that dominant carrier is what makes the phase
    # of superposed echoes separable again.
    static_path_gain_db: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if len(self.targets) == 0:
            raise ValidationError("scenario needs at least one target")
        for t in self.targets:
            for rx in t.rx_beams_hit:
                if not 1 <= rx <= self.meta.n_rx_beams:
                    raise ValidationError(f"target rx beam {rx} outside capture")
            for tx in t.tx_beams_hit:
                if not 1 <= tx <= self.meta.n_tx_beams:
                    raise ValidationError(f"target tx beam {tx} outside capture")
        if self.diffuse_jitter_sigma < 0:
            raise ValidationError("diffuse_jitter_sigma must be >= 0")

    def without_impairments(self) -> "ScenarioSpec":
        """Twin scenario: identical targets, noise and seed, no phase errors."""
        clean = dataclasses.replace(self.impairments, sfo_slope=0.0, cpo=0.0,
                                    iq_gain_mismatch=1.0, iq_phase_mismatch=0.0,
                                    iq_time_offset=0.0, affected_symbols=0.0)
        return dataclasses.replace(self, impairments=clean)


@dataclass
class GroundTruth:
    """What the generator actually put into a capture."""

    breath_rates: list
    heart_rates: list
    target_amplitudes: list
    noise_power: float
    impairments: ImpairmentSpec
    rng_seed: int
    targets: tuple = ()

    def to_json(self) -> str:
        doc = {
            "breath_rates": self.breath_rates,
            "heart_rates": self.heart_rates,
            "breath_rates_bpm": [60.0 * f for f in self.breath_rates],
            "heart_rates_bpm": [60.0 * f for f in self.heart_rates],
            "target_amplitudes": self.target_amplitudes,
            "noise_power": self.noise_power,
            "rng_seed": self.rng_seed,
            "impairments": dataclasses.asdict(self.impairments),
            "targets": [_target_to_doc(t) for t in self.targets],
        }
        return json.dumps(doc, sort_keys=True, indent=2, allow_nan=True)


def subcarrier_wavelength(meta: CaptureMeta, n_f: int) -> float:
    """Wavelength of grid index ``n_f`` (0-based); raises on out-of-range index."""
    return C_LIGHT / meta.subcarrier_frequency(n_f)


def vital_phase(t, target: TargetSpec, lam: float):
    """Phase 2*pi*d(t)/lambda of the back-scattered path at time ``t`` (s)."""
    t = np.asarray(t, dtype=np.float64)
    d = (target.mean_distance
         + target.breath_amp * np.cos(2.0 * np.pi * target.breath_rate * t)
         + target.heart_amp * np.cos(2.0 * np.pi * target.heart_rate * t))
    return 2.0 * np.pi * d / lam


def impairment_phase(imp: ImpairmentSpec, n_f) -> np.ndarray:
    """Phase shift added to the measured phase at 1-based model index ``n_f``."""
    n = np.asarray(n_f, dtype=np.float64)
    x = n * imp.iq_time_offset
    num = imp.iq_gain_mismatch * np.sin(x + imp.iq_phase_mismatch)
    den = np.cos(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        iq = np.where(np.abs(den) < 1e-12,
                      np.sign(num) * np.pi / 2.0,
                      np.arctan(num / den))
    return iq + n * imp.sfo_slope + imp.cpo


def target_amplitude(target: TargetSpec, meta: CaptureMeta,
                     tx_power_dbm: float = DEFAULT_TX_POWER_DBM,
                     antenna_gain_db: float = DEFAULT_ANTENNA_GAIN_DB) -> float:
    """Linear received amplitude from the two-leg link budget.

    Each leg is half the total path; received power (dBm-scaled units) is
    P_T + G_T + G_R - FSPL(out) - FSPL(back) + 10*log10(reflect_coeff).
    """
    leg = target.mean_distance / 2.0
    f = meta.center_frequency
    p_rx_db = (tx_power_dbm + 2.0 * antenna_gain_db - 2.0 * fspl(leg, f)
               + 10.0 * math.log10(target.reflect_coeff))
    return 10.0 ** (p_rx_db / 20.0)


def _rng(seed: int, tag: int, rx: int, tx: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, tag, rx, tx)))


def generate(spec: ScenarioSpec) -> tuple[CsiCapture, GroundTruth]:
    """Render a scenario into a capture plus its ground-truth sidecar.

    Noise and impairment-activation draws come from separate per-pair
    streams, so a scenario and its ``without_impairments`` twin share the
    exact same noise realization.
    """
    meta = spec.meta
    n_s, n_r, n_t, n_f = (meta.n_symbols, meta.n_rx_beams, meta.n_tx_beams,
                          meta.n_subcarriers)
    t = np.arange(n_s) / meta.symbol_rate
    lam = C_LIGHT / meta.frequencies  # per subcarrier

    amplitudes = [target_amplitude(tg, meta, spec.tx_power_dbm, spec.antenna_gain_db)
                  for tg in spec.targets]
    p_sig = max(a * a for a in amplitudes)
    snr = spec.impairments.awgn_snr
    noise_power = 0.0 if math.isinf(snr) else p_sig / 10.0 ** (snr / 10.0)

    imp = spec.impairments
    n_model = np.arange(1, n_f + 1, dtype=np.float64)
    imp_phasor = np.exp(1j * impairment_phase(imp, n_model))

    static_amp = None
    if spec.static_path_gain_db is not None:
        static_amp = math.sqrt(p_sig) * 10.0 ** (spec.static_path_gain_db / 20.0)

    h = np.zeros((n_s, n_r, n_t, n_f), dtype=np.complex128)
    for rx0 in range(n_r):
        for tx0 in range(n_t):
            cell = np.zeros((n_s, n_f), dtype=np.complex128)
            if static_amp is not None:
                theta = _rng(spec.rng_seed, 4, rx0, tx0).uniform(0.0, 2.0 * np.pi)
                cell += static_amp * np.exp(1j * theta)
            for tg, amp in zip(spec.targets, amplitudes):
                if (rx0 + 1) in tg.rx_beams_hit and (tx0 + 1) in tg.tx_beams_hit:
                    phase = vital_phase(t[:, None], tg, lam[None, :])
                    sig = amp * np.exp(1j * phase)
                    if spec.diffuse_jitter_sigma > 0:
                        jit = _rng(spec.rng_seed, 3, rx0, tx0).normal(
                            0.0, spec.diffuse_jitter_sigma, size=n_s)
                        sig = sig * np.exp(jit)[:, None]
                    cell += sig
            if noise_power > 0:
                scale = math.sqrt(noise_power / 2.0)
                g = _rng(spec.rng_seed, 1, rx0, tx0)
                cell += g.normal(0.0, scale, size=(n_s, n_f)) \
                    + 1j * g.normal(0.0, scale, size=(n_s, n_f))
            if imp.affected_symbols > 0:
                mask = _rng(spec.rng_seed, 2, rx0, tx0).random(n_s) < imp.affected_symbols
                cell[mask] *= imp_phasor[None, :]
            h[:, rx0, tx0, :] = cell

    # float32 round trip pins the in-memory tensor to what a file would hold
    h = h.astype(np.complex64).astype(np.complex128)
    capture = CsiCapture(meta, h)
    truth = GroundTruth(
        breath_rates=[tg.breath_rate for tg in spec.targets],
        heart_rates=[tg.heart_rate for tg in spec.targets],
        target_amplitudes=amplitudes,
        noise_power=noise_power,
        impairments=imp,
        rng_seed=spec.rng_seed,
        targets=spec.targets,
    )
    return capture, truth


# --- JSON round trip for scenario documents -------------------------------

def _target_to_doc(t: TargetSpec) -> dict:
    return {
        "mean_distance": t.mean_distance,
        "breath_rate": t.breath_rate,
        "heart_rate": t.heart_rate,
        "breath_amp": t.breath_amp,
        "heart_amp": t.heart_amp,
        "rx_beams_hit": sorted(t.rx_beams_hit),
        "tx_beams_hit": sorted(t.tx_beams_hit),
        "reflect_coeff": t.reflect_coeff,
    }


def scenario_to_json(spec: ScenarioSpec) -> str:
    doc = {
        "meta": spec.meta.to_header(),
        "targets": [_target_to_doc(t) for t in spec.targets],
        "impairments": dataclasses.asdict(spec.impairments),
        "rng_seed": spec.rng_seed,
        "tx_power_dbm": spec.tx_power_dbm,
        "antenna_gain_db": spec.antenna_gain_db,
        "diffuse_jitter_sigma": spec.diffuse_jitter_sigma,
        "static_path_gain_db": spec.static_path_gain_db,
    }
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=True)


def scenario_from_json(text: str) -> ScenarioSpec:
    """Parse a scenario document; raises ValidationError on schema problems."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"scenario JSON is unparseable: {e}") from e
    try:
        meta = CaptureMeta(**doc["meta"])
        targets = tuple(
            TargetSpec(
                mean_distance=td["mean_distance"],
                breath_rate=td["breath_rate"],
                heart_rate=td["heart_rate"],
                breath_amp=td.get("breath_amp", DEFAULT_BREATH_AMP),
                heart_amp=td.get("heart_amp", DEFAULT_HEART_AMP),
                rx_beams_hit=frozenset(td["rx_beams_hit"]),
                tx_beams_hit=frozenset(td["tx_beams_hit"]),
                reflect_coeff=td.get("reflect_coeff", 0.35),
            )
            for td in doc["targets"]
        )
        imp_doc = doc.get("impairments", {})
        snr = imp_doc.get("awgn_snr", math.inf)
        impairments = ImpairmentSpec(
            sfo_slope=imp_doc.get("sfo_slope", 0.0),
            cpo=imp_doc.get("cpo", 0.0),
            iq_gain_mismatch=imp_doc.get("iq_gain_mismatch", 1.0),
            iq_phase_mismatch=imp_doc.get("iq_phase_mismatch", 0.0),
            iq_time_offset=imp_doc.get("iq_time_offset", 0.0),
            awgn_snr=float(snr) if snr is not None else math.inf,
            affected_symbols=imp_doc.get("affected_symbols", 0.0),
        )
        return ScenarioSpec(
            meta=meta,
            targets=targets,
            impairments=impairments,
            rng_seed=doc.get("rng_seed", 0),
            tx_power_dbm=doc.get("tx_power_dbm", DEFAULT_TX_POWER_DBM),
            antenna_gain_db=doc.get("antenna_gain_db", DEFAULT_ANTENNA_GAIN_DB),
            diffuse_jitter_sigma=doc.get("diffuse_jitter_sigma", 0.0),
            static_path_gain_db=doc.get("static_path_gain_db"),
        )
    except KeyError as e:
        raise ValidationError(f"scenario JSON missing required field {e}") from e
    except TypeError as e:
        raise ValidationError(f"scenario JSON malformed: {e}") from e
