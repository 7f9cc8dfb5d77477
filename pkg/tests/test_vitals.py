import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import freqz, firwin

from beamvitals import beams, prep
from beamvitals.capture import BeamPair
from beamvitals.errors import (EstimationError, InsufficientPeaksError,
                               ValidationError)
from beamvitals.prep import PhaseSeries
from beamvitals.synth import ImpairmentSpec, generate
from beamvitals.vitals import (BREATH_BAND, HEART_BAND, Band, VitalEstimate,
                               band_peaks, count_targets, estimate_multi,
                               estimate_single, estimate_single_fft, fft_spectrum,
                               fir_bandpass, kmeans_1d, peak_intervals,
                               weighted_rate)

from conftest import ts1_scenario, ts3_scenario


def test_band_validation():
    with pytest.raises(ValidationError):
        Band(1.0, 0.5)
    assert BREATH_BAND.min_period == 1.0
    assert BREATH_BAND.max_period == 12.5


# --- FIR bandpass -----------------------------------------------------------

def test_fir_dc_rejected():
    out = fir_bandpass(np.full(4000, 2.5), 100.0, BREATH_BAND)
    assert np.abs(out).max() < 1e-3 * 2.5


def test_fir_inband_tone_matches_design_response():
    # oracle: the squared magnitude of the designed taps at the tone
    fs, f0 = 100.0, 0.5
    taps = firwin(201, [BREATH_BAND.lo, BREATH_BAND.hi], pass_zero=False,
                  fs=fs, window="hamming")
    taps = taps - taps.mean()
    _, h = freqz(taps, worN=[2 * np.pi * f0 / fs])
    expected = float(np.abs(h[0]) ** 2)  # forward-backward pass
    t = np.arange(6000) / fs
    y = fir_bandpass(np.cos(2 * np.pi * f0 * t), fs, BREATH_BAND)
    amp = np.sqrt(2 * np.mean(y[1000:-1000] ** 2))
    assert amp == pytest.approx(expected, rel=0.01)


def test_fir_out_of_band_tone_attenuated():
    fs = 100.0
    t = np.arange(6000) / fs
    y = fir_bandpass(np.cos(2 * np.pi * 3.0 * t), fs, HEART_BAND)
    amp = np.sqrt(2 * np.mean(y[1000:-1000] ** 2))
    assert 20 * np.log10(amp) < -40.0


def test_fir_zero_phase():
    fs = 100.0
    t = np.arange(4000) / fs
    x = np.cos(2 * np.pi * 0.5 * t)
    y = fir_bandpass(x, fs, BREATH_BAND)
    mid = slice(500, 3500)
    xc = np.correlate(y[mid], x[mid], "full")
    assert np.argmax(xc) - (x[mid].size - 1) == 0


def test_fir_band_outside_nyquist():
    with pytest.raises(ValidationError):
        fir_bandpass(np.zeros(500), 100.0, Band(40.0, 60.0))


# --- spectra ----------------------------------------------------------------

def test_fft_spectrum_tone_argmax():
    fs = 100.0
    t = np.arange(500) / fs
    freqs, power = fft_spectrum(np.cos(2 * np.pi * 0.5 * t), fs, 4096)
    assert freqs[np.argmax(power)] == pytest.approx(0.5, abs=fs / 4096)
    assert power.max() == 1.0


def test_fft_spectrum_two_tones():
    fs = 100.0
    t = np.arange(3000) / fs  # 30 s: plenty of cycles to resolve both
    x = np.cos(2 * np.pi * 0.35 * t) + np.cos(2 * np.pi * 0.69 * t)
    freqs, power = fft_spectrum(x, fs, 8192)
    pk = band_peaks(freqs, power, BREATH_BAND, thr=0.5)
    assert pk.size == 2
    assert pk[0] == pytest.approx(0.35, abs=0.02)
    assert pk[1] == pytest.approx(0.69, abs=0.02)


def test_fft_spectrum_bin_width():
    freqs, _ = fft_spectrum(np.zeros(500) + 1.0, 100.0, 4096)
    assert freqs[1] == pytest.approx(100.0 / 4096, rel=1e-12)
    assert freqs[1] == pytest.approx(0.0244, abs=1e-4)


def test_fft_spectrum_validation():
    with pytest.raises(ValidationError):
        fft_spectrum(np.zeros(0), 100.0)
    with pytest.raises(ValidationError):
        fft_spectrum(np.zeros(500), 100.0, n_fft=256)


def test_count_targets_cases():
    freqs = np.linspace(0, 3, 1000)
    assert count_targets(freqs, np.zeros(1000), BREATH_BAND) == 0
    fs = 100.0
    t = np.arange(3000) / fs
    two = np.cos(2 * np.pi * 0.35 * t) + np.cos(2 * np.pi * 0.69 * t)
    one = np.cos(2 * np.pi * 0.5 * t)
    f2, p2 = fft_spectrum(two, fs, 8192)
    f1, p1 = fft_spectrum(one, fs, 8192)
    assert count_targets(f2, p2, BREATH_BAND) == 2
    assert count_targets(f1, p1, BREATH_BAND) == 1
    with pytest.raises(ValidationError):
        count_targets(f1, p1, BREATH_BAND, thr=1.5)


# --- peak intervals ---------------------------------------------------------

def test_peak_intervals_clean_tone():
    fs = 100.0
    t = np.arange(2000) / fs
    period = peak_intervals(np.cos(2 * np.pi * 0.5 * t), fs, BREATH_BAND)
    assert period == pytest.approx(2.0, abs=1.5 / fs)


def test_peak_intervals_expected_breath_period():
    fs = 100.0
    t = np.arange(2000) / fs
    period = peak_intervals(np.cos(2 * np.pi * 0.56 * t), fs, BREATH_BAND)
    assert period == pytest.approx(1.0 / 0.56, abs=0.02)
    assert 1.0 / 0.56 == pytest.approx(1.786, abs=1e-3)


def test_peak_intervals_removal_rule():
    # peaks spaced [1.8, 0.2, 1.7] s apart: the 0.2 s gap is impossible for
    # breathing and is deleted, leaving mean 1.75
    fs = 100.0
    t = np.arange(500) / fs
    x = np.zeros_like(t)
    for pos in (0.3, 2.1, 2.3, 4.0):
        x += np.exp(-0.5 * ((t - pos) / 0.05) ** 2)
    period = peak_intervals(x, fs, BREATH_BAND)
    assert period == pytest.approx(1.75, abs=0.02)


def test_peak_intervals_insufficient():
    with pytest.raises(InsufficientPeaksError):
        peak_intervals(np.zeros(100), 100.0, BREATH_BAND)
    with pytest.raises(ValidationError):
        peak_intervals(np.zeros(0), 100.0, BREATH_BAND)


# --- weighted fusion --------------------------------------------------------

def test_weighted_rate_single_contributor():
    est = weighted_rate([(0, 2.0, 1.0)], kind="breath")
    assert est.rate_hz == pytest.approx(0.5)
    assert est.rate_bpm == pytest.approx(30.0)


def test_weighted_rate_hand_value():
    est = weighted_rate([(0, 0.5, 1.0), (1, 0.7, 3.0)])
    mean_period = (0.5 * 1 + 0.7 * 3) / 4
    assert mean_period == pytest.approx(0.65)
    assert est.rate_hz == pytest.approx(1 / 0.65)


def test_weighted_rate_equal_weights_is_mean():
    est = weighted_rate([(0, 1.0, 2.0), (1, 3.0, 2.0)])
    assert est.rate_hz == pytest.approx(1 / 2.0)


def test_weighted_rate_validation():
    with pytest.raises(ValidationError):
        weighted_rate([])
    with pytest.raises(ValidationError):
        weighted_rate([(0, 1.0, 0.0)])
    with pytest.raises(ValidationError):
        weighted_rate([(0, -1.0, 1.0)])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 10.0),
                          st.floats(0.0, 5.0, allow_subnormal=False)),
                min_size=1, max_size=10)
       .filter(lambda c: sum(v for _, v in c) > 1e-9))
def test_weighted_rate_convexity_and_scale_invariance(contribs):
    entries = [(i, l, v) for i, (l, v) in enumerate(contribs)]
    est = weighted_rate(entries)
    periods = [l for _, l, _ in entries]
    assert min(periods) - 1e-9 <= 1 / est.rate_hz <= max(periods) + 1e-9
    scaled = [(i, l, v * 37.0) for i, l, v in entries]
    assert weighted_rate(scaled).rate_hz == pytest.approx(est.rate_hz, rel=1e-12)


# --- k-means ----------------------------------------------------------------

def test_kmeans_k1_is_mean():
    pts = [0.2, 0.4, 0.9]
    assert kmeans_1d(pts, 1)[0] == pytest.approx(np.mean(pts))


def test_kmeans_hand_case():
    cents = kmeans_1d([0.34, 0.36, 0.68, 0.70], 2)
    assert cents[0] == pytest.approx(0.35)
    assert cents[1] == pytest.approx(0.69)


def test_kmeans_validation():
    with pytest.raises(ValidationError):
        kmeans_1d([1.0, 2.0], 3)
    with pytest.raises(ValidationError):
        kmeans_1d([1.0], 0)


def _exhaustive_wcss(points, k):
    """Global optimum by scanning contiguous partitions of the sorted points."""
    pts = np.sort(np.asarray(points))
    n = pts.size
    best = np.inf
    for cuts in itertools.combinations(range(1, n), k - 1):
        bounds = [0, *cuts, n]
        wcss = 0.0
        for a, b in zip(bounds[:-1], bounds[1:]):
            seg = pts[a:b]
            wcss += float(np.sum((seg - seg.mean()) ** 2))
        best = min(best, wcss)
    return best


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 3.0), min_size=2, max_size=8),
       st.integers(1, 4))
def test_kmeans_matches_exhaustive_global_optimum(points, k):
    if k > len(points):
        k = len(points)
    cents = kmeans_1d(points, k, seed=0)
    pts = np.asarray(points)
    assign = np.argmin(np.abs(pts[:, None] - cents[None, :]), axis=1)
    wcss = float(np.sum((pts - cents[assign]) ** 2))
    assert wcss <= _exhaustive_wcss(points, k) + 1e-9


def test_kmeans_deterministic_for_small_inputs():
    pts = [0.31, 0.33, 0.35, 0.66, 0.70]
    a = kmeans_1d(pts, 2, seed=0)
    b = kmeans_1d(pts, 2, seed=99)
    assert np.allclose(a, b)


# --- estimators -------------------------------------------------------------

def _selected(cap, rx, **prep_kwargs):
    series = prep.preprocess_pair(cap, BeamPair(1, rx), **prep_kwargs)
    keep = beams.select_subcarriers(series, frac=0.8)
    return [series[i] for i in keep]


def test_estimate_single_on_synth_target():
    cap, _ = generate(ts1_scenario(seed=0, n_rx=1))
    b, h = estimate_single(_selected(cap, 1))
    assert abs(b.rate_bpm - 0.56 * 60) <= 2.0
    assert abs(h.rate_bpm - 1.37 * 60) <= 2.0
    assert b.method == "dwt" and h.kind == "heart"


def test_estimate_single_noise_only_fails_loudly():
    cap, _ = generate(ts1_scenario(seed=1, n_rx=2, n_symbols=4000))
    with pytest.raises(EstimationError):
        estimate_single(_selected(cap, 2))  # rx 2 carries no target


def test_estimate_single_invariant_under_constant_offset():
    cap, _ = generate(ts1_scenario(seed=2, n_rx=1))
    sel = _selected(cap, 1)
    b1, h1 = estimate_single(sel)
    shifted = [PhaseSeries(pair=s.pair, subcarrier=s.subcarrier, fs=s.fs,
                           samples=s.samples + 11.0) for s in sel]
    b2, h2 = estimate_single(shifted)
    assert b2.rate_hz == pytest.approx(b1.rate_hz, rel=1e-9)
    assert h2.rate_hz == pytest.approx(h1.rate_hz, rel=1e-9)


def test_estimate_multi_consistent_with_fft_path():
    # the multi-person estimator's operating regime: a direct-path carrier
    # linearizes the phase so echo tones stay free of modulation harmonics
    import dataclasses
    spec = ts1_scenario(seed=3, n_rx=1, breath_amp=1.5e-3, heart_amp=2.5e-4,
                        impairments=ImpairmentSpec(awgn_snr=25.0))
    spec = dataclasses.replace(spec, static_path_gain_db=10.0)
    cap, _ = generate(spec)
    sel = _selected(cap, 1, trend_window=6000)
    multi = estimate_multi(sel, BREATH_BAND, thr=0.35)
    fft_est = estimate_single_fft(sel, BREATH_BAND)
    assert len(multi) == 1
    assert multi[0].method == "fft_kmeans"
    native_bin = 100.0 / 500  # 0.2 Hz
    assert abs(multi[0].rate_hz - fft_est.rate_hz) <= native_bin


def test_estimate_multi_identical_rates_collapse():
    from beamvitals.synth import ScenarioSpec, TargetSpec
    from beamvitals.capture import table1_meta
    meta = table1_meta(n_symbols=10000, n_rx_beams=2, n_tx_beams=1)
    kw = dict(breath_rate=0.5, heart_rate=1.3, breath_amp=1.5e-3, heart_amp=2.5e-4,
              tx_beams_hit={1})
    t1 = TargetSpec(mean_distance=3.0, rx_beams_hit={1, 2}, **kw)
    t2 = TargetSpec(mean_distance=4.0, rx_beams_hit={1, 2}, **kw)
    spec = ScenarioSpec(meta=meta, targets=(t1, t2),
                        impairments=ImpairmentSpec(awgn_snr=25.0), rng_seed=4,
                        static_path_gain_db=10.0)
    cap, _ = generate(spec)
    series = _selected(cap, 1, trend_window=6000) + _selected(cap, 2, trend_window=6000)
    ests = estimate_multi(series, BREATH_BAND, thr=0.35)
    assert len(ests) == 1
    assert ests[0].rate_hz == pytest.approx(0.5, abs=0.05)


def test_estimate_multi_no_tone_returns_empty():
    flat = [PhaseSeries(pair=BeamPair(1, 1), subcarrier=i, fs=100.0,
                        samples=np.zeros(500)) for i in range(4)]
    assert estimate_multi(flat, BREATH_BAND) == []


def test_estimate_single_off_bin_beats_fft_argmax():
    """Mid-bin truth: the interval method is unquantized while the native
    spectral grid of a 5 s capture is 0.2 Hz."""
    wins = 0
    for seed in range(6):
        cap, _ = generate(ts1_scenario(seed=seed, n_rx=1, breath=0.50))
        sel = _selected(cap, 1)
        b, _h = estimate_single(sel)
        fft_b = estimate_single_fft(sel, BREATH_BAND)
        if abs(b.rate_hz - 0.50) < abs(fft_b.rate_hz - 0.50):
            wins += 1
    assert wins >= 5
