import numpy as np
import pytest

from beamvitals.capture import BeamPair, slice_pair, table1_meta
from beamvitals.errors import ValidationError
from beamvitals.synth import (ImpairmentSpec, ScenarioSpec, TargetSpec, generate,
                              impairment_phase, scenario_from_json, scenario_to_json,
                              subcarrier_wavelength, vital_phase)
from beamvitals.calib import model_residual, params_from_impairments

from conftest import small_meta, ts1_scenario

C = 299_792_458.0


def odd_meta(fc=26e9):
    m = small_meta(n_subcarriers=101)
    return type(m)(center_frequency=fc, bandwidth=20e6, subcarrier_spacing=15e3,
                   n_subcarriers=101, n_symbols=m.n_symbols, n_rx_beams=2,
                   n_tx_beams=1, symbol_rate=2000.0, capture_duration=m.capture_duration)


def test_center_wavelength():
    lam = subcarrier_wavelength(odd_meta(), 50)  # exact band center
    assert lam == pytest.approx(C / 26e9, rel=1e-12)
    assert lam == pytest.approx(0.011530, abs=5e-7)


def test_wavelength_ratio_halves_with_frequency():
    lam26 = subcarrier_wavelength(odd_meta(26e9), 50)
    lam13 = subcarrier_wavelength(odd_meta(13e9), 50)
    assert lam26 / lam13 == pytest.approx(0.5, rel=1e-12)


def test_edge_subcarrier_monotonicity():
    meta = odd_meta()
    lam_top = subcarrier_wavelength(meta, meta.n_subcarriers - 1)
    lam_mid = subcarrier_wavelength(meta, 50)
    lam_bot = subcarrier_wavelength(meta, 0)
    assert lam_top < lam_mid < lam_bot
    assert meta.subcarrier_frequency(meta.n_subcarriers - 1) == pytest.approx(26e9 + 10e6)


def test_wavelength_index_out_of_range():
    with pytest.raises(ValidationError):
        subcarrier_wavelength(odd_meta(), 101)


def _target(**kw):
    base = dict(mean_distance=2.0, breath_rate=0.56, heart_rate=1.37,
                breath_amp=5e-3, heart_amp=5e-4, rx_beams_hit={1}, tx_beams_hit={1})
    base.update(kw)
    return TargetSpec(**base)


def test_vital_phase_static_target():
    lam = 0.0115
    tgt = _target(mean_distance=lam, breath_amp=1e-12, heart_amp=1e-13)
    t = np.linspace(0, 5, 100)
    phase = vital_phase(t, tgt, lam)
    assert np.allclose(phase, 2 * np.pi, atol=1e-8)


def test_vital_phase_at_zero():
    tgt = _target()
    lam = 0.0115
    expected = 2 * np.pi * (2.0 + 5e-3 + 5e-4) / lam
    assert vital_phase(0.0, tgt, lam) == pytest.approx(expected, rel=1e-12)


def test_vital_phase_breath_period_dominates():
    tgt = _target(breath_rate=0.56, heart_rate=1.37)
    fs = 100.0
    t = np.arange(2000) / fs
    phase = vital_phase(t, tgt, 0.0115)
    x = phase - phase.mean()
    ac = np.correlate(x, x, "full")[x.size - 1:]
    # first major autocorrelation peak away from zero lag
    from scipy.signal import find_peaks
    peaks, _ = find_peaks(ac, prominence=0.1 * ac[0])
    assert peaks.size > 0
    assert peaks[0] / fs == pytest.approx(1.0 / 0.56, abs=0.05)


def test_target_invariants():
    with pytest.raises(ValidationError):
        _target(breath_rate=3.0)
    with pytest.raises(ValidationError):
        _target(heart_rate=0.5)
    with pytest.raises(ValidationError):
        _target(breath_amp=1e-4, heart_amp=5e-4)  # breathing must dominate
    with pytest.raises(ValidationError):
        _target(reflect_coeff=0.0)


def test_scenario_needs_targets():
    with pytest.raises(ValidationError):
        ScenarioSpec(meta=small_meta(), targets=())


def test_static_scene_constant_phase():
    meta = small_meta(n_symbols=64, n_rx=1, n_subcarriers=8)
    tgt = _target(breath_amp=1e-12, heart_amp=1e-13)
    spec = ScenarioSpec(meta=meta, targets=(tgt,), impairments=ImpairmentSpec(),
                        rng_seed=0)
    cap, _ = generate(spec)
    phase = np.angle(slice_pair(cap, BeamPair(1, 1)))
    assert np.ptp(phase, axis=0).max() < 1e-6


def test_clean_capture_phase_matches_model():
    """No impairments, no noise: the unwrapped phase of a hit pair equals
    the displacement model up to one shared 2*pi branch."""
    import math
    from beamvitals.prep import unwrap
    meta = small_meta(n_symbols=400, n_rx=1, n_subcarriers=8)
    tgt = _target()
    spec = ScenarioSpec(meta=meta, targets=(tgt,), impairments=ImpairmentSpec(),
                        rng_seed=0)
    cap, _ = generate(spec)
    t = np.arange(meta.n_symbols) / meta.symbol_rate
    for n_f in (0, 4, 7):
        lam = subcarrier_wavelength(meta, n_f)
        expected = vital_phase(t, tgt, lam)
        measured = unwrap(np.angle(slice_pair(cap, BeamPair(1, 1))[:, n_f]))
        diff = measured - expected
        k = diff[0] / (2 * np.pi)
        assert k == pytest.approx(round(k), abs=1e-5)
        # float32 storage limits the match to ~1e-7 relative
        assert np.ptp(diff) < 1e-4


def test_generate_determinism():
    spec = ts1_scenario(seed=5, n_symbols=200, n_rx=2)
    a, _ = generate(spec)
    b, _ = generate(spec)
    assert np.array_equal(a.h, b.h)


def test_energy_bookkeeping_on_noise_pair():
    spec = ts1_scenario(seed=6, n_symbols=2000, n_rx=2, snr=20.0)
    cap, truth = generate(spec)
    noise = slice_pair(cap, BeamPair(tx_index=1, rx_index=2))  # no target here
    measured = np.mean(np.abs(noise) ** 2)
    assert measured == pytest.approx(truth.noise_power, rel=0.05)


def test_impairment_slope_injection():
    """With every symbol affected, the subcarrier slope gains exactly +s."""
    meta = small_meta(n_symbols=50, n_rx=1, n_subcarriers=64)
    tgt = _target(breath_amp=1e-12, heart_amp=1e-13)
    s = 0.01
    dirty_spec = ScenarioSpec(
        meta=meta, targets=(tgt,), rng_seed=1,
        impairments=ImpairmentSpec(sfo_slope=s, affected_symbols=1.0))
    clean_spec = dirty_spec.without_impairments()
    dirty, _ = generate(dirty_spec)
    clean, _ = generate(clean_spec)
    n = np.arange(64)
    for cap, extra in ((clean, 0.0), (dirty, s)):
        u = np.unwrap(np.angle(slice_pair(cap, BeamPair(1, 1))), axis=1)
        slopes = np.polyfit(n, u.T, 1)[0]
        geo_slope = 2 * np.pi * 2.0 * meta.effective_spacing / C
        assert np.allclose(slopes, geo_slope + extra, atol=1e-6)


def test_disjoint_sets_peak_at_own_rate():
    """Detrended-phase spectra on each beam set peak at that target's rate."""
    from conftest import ts3_scenario
    from beamvitals import prep
    from beamvitals.vitals import fft_spectrum

    cap, _ = generate(ts3_scenario(seed=2, disjoint=True,
                                   impairments=ImpairmentSpec(awgn_snr=25.0)))
    for rx, f_true in ((1, 0.35), (3, 0.69)):
        series = prep.preprocess_pair(cap, BeamPair(1, rx), trend_window=6000)
        freqs, power = fft_spectrum(series[50].samples, 100.0, 4096)
        band = (freqs >= 0.08) & (freqs <= 1.0)
        f_hat = freqs[band][np.argmax(power[band])]
        assert f_hat == pytest.approx(f_true, abs=0.05)


def test_impairment_phase_matches_compensation_model():
    imp = ImpairmentSpec(sfo_slope=0.01, cpo=0.5, iq_gain_mismatch=1.05,
                         iq_phase_mismatch=0.02, iq_time_offset=0.005)
    n = np.arange(1, 101)
    added = impairment_phase(imp, n)
    comp = model_residual(params_from_impairments(imp), n)
    assert np.allclose(added, -comp, atol=1e-12)


def test_twins_identical_on_unaffected_symbols():
    spec = ts1_scenario(seed=7, n_symbols=400, n_rx=1, snr=30.0)
    dirty, _ = generate(spec)
    clean, _ = generate(spec.without_impairments())
    d = slice_pair(dirty, BeamPair(1, 1))
    c = slice_pair(clean, BeamPair(1, 1))
    same = np.isclose(d, c).all(axis=1)
    frac = same.mean()
    assert 0.8 < frac < 1.0  # about 10% of symbols carry the distortion
    assert np.array_equal(d[same], c[same])


def test_static_path_makes_empty_pairs_coherent():
    from conftest import ts3_scenario
    spec = ts3_scenario(seed=3, disjoint=True)
    cap, _ = generate(spec)
    # rx 1 sees only target 1 plus the carrier: phase swings stay bounded
    phase = np.unwrap(np.angle(slice_pair(cap, BeamPair(1, 1))[:, 0]))
    assert np.ptp(phase) < 2 * np.pi


def test_scenario_json_round_trip():
    spec = ts1_scenario(seed=9, n_symbols=100, n_rx=2)
    again = scenario_from_json(scenario_to_json(spec))
    assert again == spec


def test_scenario_json_rejects_garbage():
    with pytest.raises(ValidationError):
        scenario_from_json("{ not json")
    with pytest.raises(ValidationError):
        scenario_from_json("{}")
