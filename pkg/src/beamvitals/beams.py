"""Power-domain analysis: delay profiles, link budget, variance energy, selection.

Everything here is a pure function of its inputs.  Beam selection ranks
receive beams by the variance energy of their preprocessed phase, after a
relative power gate that demotes pairs carrying nothing but noise (pure
noise phase is a random walk once unwrapped, so its raw variance says
nothing about vital-sign activity).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .capture import BeamPair, CsiCapture, slice_pair
from .errors import ValidationError

C_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class Pdp:
    """Power delay profile of one CTF snapshot."""

    bins: np.ndarray
    delay_resolution: float
    zero_pad: int
    pair: BeamPair | None = None
    symbol: int | None = None


@dataclass(frozen=True)
class LinkBudget:
    """Transmit power (dBm), antenna gains (dB) and the two path legs (m)."""

    p_t: float
    g_t: float
    g_r: float
    d_t: float
    d_r: float

    def __post_init__(self):
        if self.d_t <= 0 or self.d_r <= 0:
            raise ValidationError("link budget distances must be positive")


@dataclass(frozen=True)
class VarianceMatrix:
    """Per-subcarrier, per-window phase variance [n_subcarriers x n_windows]."""

    v: np.ndarray
    window_s: float = 0.0

    def __post_init__(self):
        if self.v.size == 0:
            raise ValidationError("variance matrix is empty")
        if np.any(self.v < 0):
            raise ValidationError("variance matrix entries must be non-negative")


def pdp(ctf: np.ndarray, zero_pad: int, spacing_hz: float,
        pair: BeamPair | None = None, symbol: int | None = None) -> Pdp:
    """Hann-windowed, zero-padded |IFFT|^2 of one subcarrier snapshot.

    ``spacing_hz`` is the effective pilot spacing; the delay axis resolves
    1/(zero_pad * spacing_hz) seconds per bin.  Parseval holds as
    sum(bins) == sum(|hann*ctf|^2) / zero_pad.
    """
    ctf = np.asarray(ctf, dtype=np.complex128)
    if ctf.ndim != 1:
        raise ValidationError("pdp expects a 1-D CTF vector")
    if zero_pad < ctf.size:
        raise ValidationError(f"zero_pad {zero_pad} smaller than CTF length {ctf.size}")
    if spacing_hz <= 0:
        raise ValidationError("spacing_hz must be positive")
    windowed = np.hanning(ctf.size) * ctf
    bins = np.abs(np.fft.ifft(windowed, n=zero_pad)) ** 2
    return Pdp(bins=bins, delay_resolution=1.0 / (zero_pad * spacing_hz),
               zero_pad=zero_pad, pair=pair, symbol=symbol)


def pdp_for(c: CsiCapture, pair: BeamPair, symbol: int, zero_pad: int = 4096) -> Pdp:
    """PDP of one symbol of one beam pair."""
    snapshot = slice_pair(c, pair)[symbol]
    return pdp(snapshot, zero_pad, c.meta.effective_spacing, pair=pair, symbol=symbol)


def delay_axis(p: Pdp) -> np.ndarray:
    """Signed delay per bin (seconds); second half of the IFFT is negative lag."""
    return np.fft.fftfreq(p.zero_pad) * p.zero_pad * p.delay_resolution


def peak_delay(p: Pdp) -> float:
    """Magnitude of the delay at the strongest bin.

    The CTF phase-slope sign only mirrors the peak between positive and
    negative lags, so the absolute value is the physical path delay.
    """
    return float(abs(delay_axis(p)[int(np.argmax(p.bins))]))


def peak_distance(p: Pdp, one_way: bool = True, offset_m: float = 0.0) -> float:
    """Delay-distance of the strongest peak, optionally halved to one-way."""
    d = peak_delay(p) * C_LIGHT + offset_m
    return d / 2.0 if one_way else d


def fspl(d: float, f: float) -> float:
    """Free-space path loss in dB: 20*log10(4*pi*d*f/c)."""
    if np.any(np.asarray(d) <= 0) or np.any(np.asarray(f) <= 0):
        raise ValidationError("fspl requires positive distance and frequency")
    return 20.0 * np.log10(4.0 * np.pi * np.asarray(d) * np.asarray(f) / C_LIGHT)


def incident_power(budget: LinkBudget, frequency: float) -> float:
    """Power arriving at the target in dBm (TX power + gain - outbound FSPL)."""
    return budget.p_t + budget.g_t - fspl(budget.d_t, frequency)


def backscatter_coeff(budget: LinkBudget, p_o: float, frequency: float) -> float:
    """Reflected-minus-incident power in dB; distance effects cancel out."""
    return p_o - incident_power(budget, frequency)


def measure_backscatter(c: CsiCapture, pair: BeamPair, budget: LinkBudget,
                        noise_power: float = 0.0) -> float:
    """Estimate the back-scattering coefficient from received signal power.

    The reflected power at the target is recovered from the mean received
    power by stripping the RX gain and the return-leg path loss.
    """
    h = slice_pair(c, pair)
    mean_power = float(np.mean(np.abs(h) ** 2)) - noise_power
    if mean_power <= 0:
        raise ValidationError("received power does not exceed the noise floor")
    f = c.meta.center_frequency
    p_r = 10.0 * np.log10(mean_power)
    p_o = p_r - budget.g_r + fspl(budget.d_r, f)
    return backscatter_coeff(budget, p_o, f)


def variance_matrix(phase: np.ndarray, fs: float, window_s: float = 0.25) -> VarianceMatrix:
    """Phase variance per subcarrier over non-overlapping time windows.

    ``phase`` is [n_samples x n_subcarriers]; windows shorter than two
    samples are rejected.
    """
    phase = np.atleast_2d(np.asarray(phase, dtype=np.float64))
    n = phase.shape[0]
    win = int(round(window_s * fs))
    if win < 2:
        raise ValidationError("nve window must span at least two samples")
    n_win = n // win
    if n_win == 0:
        raise ValidationError("series shorter than one nve window")
    trimmed = phase[:n_win * win].reshape(n_win, win, phase.shape[1])
    v = trimmed.var(axis=1).T  # [n_subcarriers x n_windows]
    return VarianceMatrix(v=v, window_s=window_s)


def nve(vm: VarianceMatrix) -> float:
    """Normalized variance energy: mean |v| over the whole matrix."""
    return float(np.mean(np.abs(vm.v)))


def nve_trace(vm: VarianceMatrix) -> np.ndarray:
    """Mean |v| per time window (the over-time profile of nve)."""
    return np.mean(np.abs(vm.v), axis=0)


def select_beams(c: CsiCapture, tx: int, k: int, power_gate_db: float = 6.0,
                 nve_window_s: float = 0.25, **prep_kwargs) -> list[int]:
    """Top-k receive beams for one TX beam, ranked by phase variance energy.

    Pairs whose mean power sits within ``power_gate_db`` of the weakest
    pair are ranked behind all gated-in pairs: their phase is
    noise-dominated and its unwrapped variance is meaningless.  Ties break
    on mean |h|, then on the lower rx index.
    """
    from .prep import preprocess_pair  # local import, prep depends on capture only

    if k > c.meta.n_rx_beams:
        raise ValidationError(f"k={k} exceeds {c.meta.n_rx_beams} rx beams")
    stats = []
    powers = []
    for rx in range(1, c.meta.n_rx_beams + 1):
        pair = BeamPair(tx_index=tx, rx_index=rx)
        series = preprocess_pair(c, pair, **prep_kwargs)
        phase = np.stack([s.samples for s in series], axis=1)
        fs = series[0].fs
        vm = variance_matrix(phase, fs, window_s=nve_window_s)
        mean_amp = float(np.mean(np.abs(slice_pair(c, pair))))
        stats.append((rx, nve(vm), mean_amp))
        powers.append(mean_amp ** 2)
    floor = min(powers)
    gate = floor * 10.0 ** (power_gate_db / 10.0)
    ranked = sorted(
        stats,
        key=lambda s: (0 if s[2] ** 2 > gate else 1, -s[1], -s[2], s[0]),
    )
    return [rx for rx, _, _ in ranked[:k]]


def select_subcarriers(series: Sequence, frac: float = 0.8) -> list[int]:
    """Indices of series whose variance exceeds ``frac`` of the maximum.

    Always returns at least the argmax.  The threshold is relative, so the
    selection is invariant under uniform scaling of all variances.
    """
    if len(series) == 0:
        raise ValidationError("select_subcarriers needs at least one series")
    if not 0 < frac < 1:
        raise ValidationError("frac must lie in (0, 1)")
    variances = np.array([s.variance for s in series])
    vmax = variances.max()
    if vmax <= 0:
        return [int(np.argmax(variances))]
    selected = np.nonzero(variances > frac * vmax)[0]
    if selected.size == 0:
        selected = np.array([int(np.argmax(variances))])
    return [int(i) for i in selected]


def fov(width: float, d: float) -> float:
    """Azimuth field of view (degrees) covering ``width`` meters at range ``d``."""
    if d <= 0:
        raise ValidationError("distance must be positive")
    if width < 0:
        raise ValidationError("width must be non-negative")
    return float(np.degrees(2.0 * np.arctan(width / (2.0 * d))))


def incidence_angle(cross_range: float, d: float) -> float:
    """Beam incidence angle (degrees) for a TX offset ``cross_range`` at range ``d``."""
    if d <= 0:
        raise ValidationError("distance must be positive")
    return float(np.degrees(np.arctan(cross_range / d)))
