"""Breath/heart rate estimators.

Single-person: band-limit to the physiological band, run the wavelet
cascade and search peaks on the approximation-branch reconstruction; the
rate is the variance-weighted mean of per-subcarrier inter-peak periods.
At 100 Hz with four levels both vital bands fall inside the approximation
branch (0 - 3.125 Hz), so the bandpass in front of the cascade is what
separates breathing from heartbeat while the cascade strips wideband
noise.

Multi-person: interpolated band-masked spectra, threshold peak picking,
1-D k-means per subcarrier, variance-weighted fusion of centroids matched
to the nearest pooled tone.  The person count comes from the unweighted
pooled mean of per-series-normalized spectra so that targets visible on
fewer or weaker subcarriers still count separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import filtfilt, find_peaks, firwin

from .errors import EstimationError, InsufficientPeaksError, ValidationError
from .prep import PhaseSeries
from .wavelet import band_reconstruction

DEFAULT_FIR_TAPS = 201
DEFAULT_FFT_SIZE = 4096
DEFAULT_PEAK_PROMINENCE = 0.2   # times the series standard deviation
DEFAULT_POWER_THRESHOLD = 0.5   # of the in-band spectral maximum
DEFAULT_DWT_LEVELS = 4
DEFAULT_INTERVAL_DISPERSION = 0.4
# chest motion modulates phase by at most a few radians; a detrended series
# with a much larger spread is an unwrap random walk (no coherent carrier),
# not a vital sign
MAX_PHASE_STD = 5.0


def _coherent(series: Sequence[PhaseSeries], max_phase_std: float) -> list:
    return [s for s in series if math.sqrt(s.variance) <= max_phase_std]


@dataclass(frozen=True)
class Band:
    """Physiological frequency band in Hz."""

    lo: float
    hi: float
    kind: str = "breath"

    def __post_init__(self):
        if not 0 < self.lo < self.hi:
            raise ValidationError(f"invalid band [{self.lo}, {self.hi}]")

    @property
    def min_period(self) -> float:
        return 1.0 / self.hi

    @property
    def max_period(self) -> float:
        return 1.0 / self.lo


BREATH_BAND = Band(0.08, 1.0, "breath")
HEART_BAND = Band(1.0, 2.0, "heart")


@dataclass
class VitalEstimate:
    """A fused rate plus the per-subcarrier contributions behind it."""

    kind: str
    rate_hz: float
    method: str
    per_subcarrier: list = field(default_factory=list)  # (index, value, weight)

    @property
    def rate_bpm(self) -> float:
        return 60.0 * self.rate_hz


def fir_bandpass(x, fs: float, band: Band, ntaps: int = DEFAULT_FIR_TAPS) -> np.ndarray:
    """Zero-phase Hamming-window FIR bandpass (forward-backward application).

    The taps are re-centered to exactly zero sum, pinning the DC gain to
    zero regardless of how coarse the design is.  2-D input filters along
    axis 0.
    """
    x = np.asarray(x, dtype=np.float64)
    if band.hi >= fs / 2.0:
        raise ValidationError(f"band [{band.lo}, {band.hi}] exceeds Nyquist {fs / 2}")
    taps = firwin(ntaps, [band.lo, band.hi], pass_zero=False, fs=fs, window="hamming")
    taps = taps - taps.mean()
    padlen = min(3 * ntaps, x.shape[0] - 1)
    # even reflection keeps boundary crests smooth; odd reflection kinks them
    # and rings spurious peaks into the first fraction of a second
    return filtfilt(taps, [1.0], x, axis=0, padlen=padlen, padtype="even")


def fft_spectrum(x, fs: float, n_fft: int = DEFAULT_FFT_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """One-sided magnitude spectrum normalized to a unit maximum."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValidationError("fft_spectrum needs a non-empty series")
    if n_fft < x.shape[0]:
        raise ValidationError(f"n_fft {n_fft} shorter than the series ({x.shape[0]})")
    spec = np.abs(np.fft.rfft(x, n=n_fft))
    peak = spec.max()
    if peak > 0:
        spec = spec / peak
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / fs)
    return freqs, spec


def band_peaks(freqs: np.ndarray, power: np.ndarray, band: Band,
               thr: float = DEFAULT_POWER_THRESHOLD) -> np.ndarray:
    """Frequencies of in-band local maxima above ``thr`` of the in-band max."""
    mask = (freqs >= band.lo) & (freqs <= band.hi)
    if not mask.any():
        return np.empty(0)
    p = power[mask]
    f = freqs[mask]
    top = p.max()
    if top <= 0:
        return np.empty(0)
    idx, _ = find_peaks(p, height=thr * top)
    return f[idx]


def count_targets(freqs: np.ndarray, power: np.ndarray, band: Band,
                  thr: float = DEFAULT_POWER_THRESHOLD) -> int:
    """Number of prominent spectral tones inside the band."""
    if not 0 < thr < 1:
        raise ValidationError("thr must lie in (0, 1)")
    return int(band_peaks(freqs, power, band, thr).size)


def _surviving_intervals(peaks: np.ndarray, fs: float, band: Band) -> list:
    """Inter-peak intervals with out-of-range ones deleted shortest first."""
    intervals = list(np.diff(peaks) / fs)
    lo, hi = band.min_period, band.max_period
    while intervals:
        bad = [iv for iv in intervals if not lo <= iv <= hi]
        if not bad:
            break
        intervals.remove(min(bad))
    return intervals


def peak_intervals(x, fs: float, band: Band,
                   prominence_factor: float = DEFAULT_PEAK_PROMINENCE) -> float:
    """Mean inter-peak period after deleting physiologically impossible gaps.

    Intervals outside [1/band.hi, 1/band.lo] seconds are removed one at a
    time, shortest first; the survivors' mean is returned.  Raises
    InsufficientPeaksError when fewer than two peaks (one interval)
    survive.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValidationError("peak_intervals needs a non-empty series")
    prom = prominence_factor * float(np.std(x))
    peaks, _ = find_peaks(x, prominence=prom if prom > 0 else None)
    if peaks.size < 2:
        raise InsufficientPeaksError(f"only {peaks.size} peaks found")
    intervals = _surviving_intervals(peaks, fs, band)
    if not intervals:
        raise InsufficientPeaksError("no intervals inside the physiological range")
    return float(np.mean(intervals))


def weighted_rate(contribs: Sequence[tuple], kind: str = "breath",
                  method: str = "dwt") -> VitalEstimate:
    """Variance-weighted mean period E = sum(v*l)/sum(v); rate is 1/E."""
    if len(contribs) == 0:
        raise ValidationError("weighted_rate needs at least one contribution")
    entries = [(int(i), float(l), float(v)) for i, l, v in contribs]
    periods = np.array([l for _, l, _ in entries])
    weights = np.array([v for _, _, v in entries])
    if np.any(periods <= 0):
        raise ValidationError("periods must be positive")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValidationError("weights must be non-negative with a positive sum")
    # the estimate is invariant under weight scaling; normalizing first
    # keeps near-underflow weights from corrupting the sums
    weights = weights / weights.max()
    mean_period = float((weights * periods).sum() / weights.sum())
    return VitalEstimate(kind=kind, rate_hz=1.0 / mean_period, method=method,
                         per_subcarrier=entries)


def band_reconstructions(x: np.ndarray, fs: float, band: Band,
                         levels: int = DEFAULT_DWT_LEVELS, wavelet: str = "db4",
                         ntaps: int = DEFAULT_FIR_TAPS) -> np.ndarray:
    """Band-limited approximation-branch reconstruction, column-wise on 2-D.

    Mirror extension makes the cascade's periodic wrap continuous, so the
    reconstruction does not ring extra peaks into the series ends.
    """
    filtered = fir_bandpass(x, fs, band, ntaps=ntaps)
    mirrored = np.concatenate([filtered, filtered[::-1]], axis=0)
    return band_reconstruction(mirrored, levels, wavelet)[:filtered.shape[0]]


def _period_from_recon(recon: np.ndarray, fs: float, band: Band,
                       prominence: float, max_dispersion: float) -> float:
    prom = prominence * float(np.std(recon))
    peaks, _ = find_peaks(recon, prominence=prom if prom > 0 else None)
    if peaks.size < 2:
        raise InsufficientPeaksError(f"only {peaks.size} peaks found")
    intervals = _surviving_intervals(peaks, fs, band)
    if not intervals:
        raise InsufficientPeaksError("no intervals inside the physiological range")
    # consistency guard: wildly dispersed intervals indicate noise, not a rate
    if len(intervals) >= 2:
        mean_iv = float(np.mean(intervals))
        if float(np.std(intervals)) / mean_iv > max_dispersion:
            raise InsufficientPeaksError("inter-peak intervals too dispersed")
    return float(np.mean(intervals))


def estimate_single(series: Sequence[PhaseSeries],
                    breath_band: Band = BREATH_BAND,
                    heart_band: Band = HEART_BAND,
                    levels: int = DEFAULT_DWT_LEVELS,
                    wavelet: str = "db4",
                    ntaps: int = DEFAULT_FIR_TAPS,
                    prominence: float = DEFAULT_PEAK_PROMINENCE,
                    max_dispersion: float = DEFAULT_INTERVAL_DISPERSION,
                    max_phase_std: float = MAX_PHASE_STD,
                    ) -> tuple[VitalEstimate, VitalEstimate]:
    """Single-person breathing and heart rate from selected subcarriers.

    Subcarriers whose phase spread is physically implausible or whose peak
    train is unusable (too few or too dispersed peaks) are skipped; if
    every subcarrier is skipped for a band the whole estimate fails with
    EstimationError rather than returning a confident number.
    """
    if len(series) == 0:
        raise ValidationError("estimate_single needs at least one series")
    series = _coherent(series, max_phase_std)
    if not series:
        raise EstimationError("no coherent phase series (noise-only input?)")
    fs = series[0].fs
    stacked = np.stack([s.samples for s in series], axis=1)
    results = []
    for band in (breath_band, heart_band):
        recon = band_reconstructions(stacked, fs, band, levels, wavelet, ntaps)
        contribs = []
        for j, s in enumerate(series):
            try:
                period = _period_from_recon(recon[:, j], fs, band,
                                            prominence, max_dispersion)
            except InsufficientPeaksError:
                continue
            contribs.append((s.subcarrier, period, s.variance))
        if not contribs:
            raise EstimationError(f"no usable subcarrier for the {band.kind} band")
        results.append(weighted_rate(contribs, kind=band.kind, method="dwt"))
    return results[0], results[1]


def estimate_single_fft(series: Sequence[PhaseSeries], band: Band,
                        ntaps: int = DEFAULT_FIR_TAPS,
                        n_fft: int | None = None) -> VitalEstimate:
    """Conventional baseline: spectral argmax per subcarrier, then fusion.

    ``n_fft=None`` uses the native series length, i.e. the raw resolution
    a short capture actually offers (0.2 Hz bins for 5 s at 100 Hz).
    """
    if len(series) == 0:
        raise ValidationError("estimate_single_fft needs at least one series")
    series = _coherent(series, MAX_PHASE_STD)
    if not series:
        raise EstimationError("no coherent phase series (noise-only input?)")
    fs = series[0].fs
    stacked = np.stack([s.samples for s in series], axis=1)
    filtered = fir_bandpass(stacked, fs, band, ntaps=ntaps)
    size = n_fft if n_fft is not None else filtered.shape[0]
    if size < filtered.shape[0]:
        raise ValidationError(f"n_fft {size} shorter than the series")
    spec = np.abs(np.fft.rfft(filtered, n=size, axis=0))
    freqs = np.fft.rfftfreq(size, d=1.0 / fs)
    mask = (freqs >= band.lo) & (freqs <= band.hi)
    rates = []
    for j, s in enumerate(series):
        col = spec[mask, j]
        if not mask.any() or col.max() <= 0:
            continue
        f_hat = float(freqs[mask][np.argmax(col)])
        rates.append((s.subcarrier, f_hat, s.variance))
    if not rates:
        raise EstimationError(f"no usable subcarrier for the {band.kind} band")
    weights = np.array([v for _, _, v in rates])
    vals = np.array([f for _, f, v in rates])
    if weights.sum() <= 0:
        raise EstimationError("all subcarrier weights are zero")
    rate = float((weights * vals).sum() / weights.sum())
    return VitalEstimate(kind=band.kind, rate_hz=rate, method="fft",
                         per_subcarrier=[(i, f, v) for i, f, v in rates])


def kmeans_1d(points, k: int, seed: int = 0) -> np.ndarray:
    """Deterministic 1-D k-means; centroids returned in ascending order.

    Lloyd iterations from several deterministic farthest-point seedings
    (every point seeds a run for small inputs), keeping the partition with
    the lowest within-cluster sum of squares.  Optimal 1-D clusters are
    contiguous in sorted order, so for small inputs an exact scan over the
    contiguous partitions replaces the Lloyd result whenever a tie pattern
    traps it in a local optimum.
    """
    pts = np.asarray(points, dtype=np.float64).ravel()
    if k < 1:
        raise ValidationError("k must be >= 1")
    if k > pts.size:
        raise ValidationError(f"k={k} exceeds the {pts.size} available points")
    if np.ptp(pts) == 0:
        return np.full(k, pts[0])
    if k == pts.size:
        return np.sort(pts)

    if pts.size <= 16:
        first_choices = range(pts.size)
    else:
        rng = np.random.default_rng(seed)
        first_choices = rng.integers(0, pts.size, size=8)

    best = None
    best_wcss = np.inf
    for first in first_choices:
        centroids = [pts[int(first)]]
        while len(centroids) < k:  # farthest-point completion
            d = np.min(np.abs(pts[:, None] - np.array(centroids)[None, :]), axis=1)
            centroids.append(pts[int(np.argmax(d))])
        c = np.array(centroids)
        assign = None
        for _ in range(100):
            new_assign = np.argmin(np.abs(pts[:, None] - c[None, :]), axis=1)
            for j in range(k):  # re-seed emptied clusters on the farthest point
                if not np.any(new_assign == j):
                    d = np.abs(pts - c[new_assign])
                    far = int(np.argmax(d))
                    new_assign[far] = j
            if assign is not None and np.array_equal(new_assign, assign):
                break
            assign = new_assign
            c = np.array([pts[assign == j].mean() if np.any(assign == j) else c[j]
                          for j in range(k)])
        wcss = float(np.sum((pts - c[assign]) ** 2))
        if wcss < best_wcss - 1e-15:
            best_wcss = wcss
            best = c

    if pts.size <= 16:
        exact_c, exact_wcss = _exact_contiguous_kmeans(pts, k)
        if exact_wcss < best_wcss - 1e-15:
            best = exact_c
    return np.sort(best)


def _exact_contiguous_kmeans(pts: np.ndarray, k: int) -> tuple[np.ndarray, float]:
    import itertools

    p = np.sort(pts)
    n = p.size
    best = (None, np.inf)
    for cuts in itertools.combinations(range(1, n), k - 1):
        bounds = [0, *cuts, n]
        wcss = 0.0
        cents = []
        for a, b in zip(bounds[:-1], bounds[1:]):
            seg = p[a:b]
            m = seg.mean()
            cents.append(m)
            wcss += float(np.sum((seg - m) ** 2))
        if wcss < best[1]:
            best = (np.array(cents), wcss)
    return best


def estimate_multi(series: Sequence[PhaseSeries], band: Band,
                   thr: float = DEFAULT_POWER_THRESHOLD,
                   n_fft: int = DEFAULT_FFT_SIZE,
                   seed: int = 0) -> list[VitalEstimate]:
    """Multi-person rates inside one band via spectral k-means.

    The person count is the number of prominent tones in the pooled mean
    spectrum of all series.  Spectra are taken on the plain series and
    masked to the band: on 5 s records only the rectangular window's
    mainlobe is narrow enough to resolve breathing rates a few tens of bpm
    apart, and the realizable bandpass tilts this band enough to bias peak
    heights and positions, so the band mask does the band-limiting here.
    Per-series spectra are normalized to their in-band maximum and pooled
    unweighted so a person visible on fewer or weaker subcarriers still
    counts; the final rates are variance-weighted means of each
    subcarrier's own cluster centroids, matched to the nearest pooled
    tone.  Returns an empty list when no tone clears the threshold.
    """
    if len(series) == 0:
        raise ValidationError("estimate_multi needs at least one series")
    series = _coherent(series, MAX_PHASE_STD)
    if not series:
        return []
    per_sc = []
    pooled = None
    freqs = None
    for s in series:
        f, p = fft_spectrum(s.samples, s.fs, n_fft=max(n_fft, s.samples.shape[0]))
        mask = (f >= band.lo) & (f <= band.hi)
        top = p[mask].max() if mask.any() else 0.0
        if top > 0:
            p = p / top
        pooled = p.copy() if pooled is None else pooled + p
        freqs = f
        per_sc.append((s, f, p))
    pooled = pooled / len(per_sc)
    pooled_peaks = band_peaks(freqs, pooled, band, thr)
    k = pooled_peaks.size
    if k == 0:
        return []
    refs = np.sort(pooled_peaks)

    sums = np.zeros(k)
    weights = np.zeros(k)
    contribs: list[list] = [[] for _ in range(k)]
    for s, f, p in per_sc:
        pk = band_peaks(f, p, band, thr)
        if pk.size == 0:
            continue
        c = kmeans_1d(pk, min(k, pk.size), seed)
        for cj in c:
            j = int(np.argmin(np.abs(refs - cj)))
            sums[j] += s.variance * cj
            weights[j] += s.variance
            contribs[j].append((s.subcarrier, float(cj), s.variance))
    estimates = []
    for j in range(k):
        if weights[j] <= 0:
            continue
        estimates.append(VitalEstimate(kind=band.kind, rate_hz=float(sums[j] / weights[j]),
                                       method="fft_kmeans", per_subcarrier=contribs[j]))
    estimates.sort(key=lambda e: e.rate_hz)
    return estimates
