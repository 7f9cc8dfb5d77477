import numpy as np
import pytest
from hypothesis import settings

from beamvitals.capture import CaptureMeta, CsiCapture, table1_meta
from beamvitals.synth import ImpairmentSpec, ScenarioSpec, TargetSpec

# the whole suite is advertised as deterministic; fix hypothesis's search too
settings.register_profile("deterministic", derandomize=True, deadline=None)
settings.load_profile("deterministic")


def small_meta(n_symbols=40, n_rx=2, n_tx=1, n_subcarriers=8, symbol_rate=2000.0):
    return CaptureMeta(
        center_frequency=26e9,
        bandwidth=20e6,
        subcarrier_spacing=15e3,
        n_subcarriers=n_subcarriers,
        n_symbols=n_symbols,
        n_rx_beams=n_rx,
        n_tx_beams=n_tx,
        symbol_rate=symbol_rate,
        capture_duration=n_symbols / symbol_rate,
    )


def random_capture(meta, seed=0):
    rng = np.random.default_rng(seed)
    shape = (meta.n_symbols, meta.n_rx_beams, meta.n_tx_beams, meta.n_subcarriers)
    h = (rng.normal(size=shape) + 1j * rng.normal(size=shape)).astype(np.complex64)
    return CsiCapture(meta, h.astype(np.complex128))


def ts1_scenario(seed=0, n_symbols=10000, n_rx=2, breath=0.56, heart=1.37,
                 breath_amp=5e-3, heart_amp=1e-3, snr=20.0, distance=2.0,
                 impairments=None, rx_hit=None):
    """Single person on beam 1 (plus noise-only beams), monostatic-style."""
    meta = table1_meta(n_symbols=n_symbols, n_rx_beams=n_rx, n_tx_beams=1)
    target = TargetSpec(
        mean_distance=distance, breath_rate=breath, heart_rate=heart,
        breath_amp=breath_amp, heart_amp=heart_amp,
        rx_beams_hit=rx_hit or {1}, tx_beams_hit={1},
    )
    imp = impairments if impairments is not None else ImpairmentSpec(
        sfo_slope=0.01, cpo=0.5, iq_gain_mismatch=1.05, iq_phase_mismatch=0.02,
        iq_time_offset=0.005, awgn_snr=snr, affected_symbols=0.1)
    return ScenarioSpec(meta=meta, targets=(target,), impairments=imp, rng_seed=seed)


def ts3_scenario(seed=0, disjoint=True, rates=(0.35, 0.69), snr=20.0,
                 impairments=None):
    """Two breathing targets, bistatic-style with a direct-path carrier."""
    n_rx = 4 if disjoint else 2
    meta = table1_meta(n_symbols=10000, n_rx_beams=n_rx, n_tx_beams=1)
    rx1 = frozenset({1, 2})
    rx2 = frozenset({3, 4}) if disjoint else rx1
    t1 = TargetSpec(mean_distance=3.4, breath_rate=rates[0], heart_rate=1.2,
                    breath_amp=2e-3, heart_amp=0.33e-3,
                    rx_beams_hit=rx1, tx_beams_hit={1})
    t2 = TargetSpec(mean_distance=4.0, breath_rate=rates[1], heart_rate=1.5,
                    breath_amp=1.2e-3, heart_amp=0.2e-3,
                    rx_beams_hit=rx2, tx_beams_hit={1})
    imp = impairments if impairments is not None else ImpairmentSpec(
        sfo_slope=0.008, cpo=0.4, awgn_snr=snr, affected_symbols=0.08)
    return ScenarioSpec(meta=meta, targets=(t1, t2), impairments=imp,
                        rng_seed=seed, static_path_gain_db=10.0)


@pytest.fixture
def tiny_capture():
    return random_capture(small_meta(), seed=1)
