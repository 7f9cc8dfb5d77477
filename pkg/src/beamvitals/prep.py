"""Phase preprocessing: unwrap, Hampel detrend/denoise, anti-aliased decimation.

The Hampel stages follow the sliding-median recipe with a threshold tied
to the GLOBAL standard deviation of the series (not the local MAD of the
textbook filter): a wide window extracts the slow trend that is then
subtracted, and a narrow window replaces impulsive samples.  Windows
shrink at the series boundaries rather than padding invented data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.signal import firwin

from .capture import BeamPair, CsiCapture, slice_pair
from .errors import ValidationError

DEFAULT_TREND_WINDOW = 2000
DEFAULT_DENOISE_WINDOW = 50
DEFAULT_HAMPEL_THRESHOLD = 0.01
DEFAULT_DOWNSAMPLE = 20
AA_TAPS = 101
AA_CUTOFF = 0.8  # fraction of the output Nyquist


@dataclass
class PhaseSeries:
    """Cleaned, downsampled phase of one (beam pair, subcarrier) cell."""

    pair: BeamPair
    subcarrier: int
    fs: float
    samples: np.ndarray

    def __post_init__(self):
        if self.fs <= 0:
            raise ValidationError("fs must be positive")
        self.samples = np.asarray(self.samples, dtype=np.float64)

    @property
    def variance(self) -> float:
        """Population variance, recomputed from the samples on every access."""
        return float(np.var(self.samples))


def unwrap(phase) -> np.ndarray:
    """1-D unwrap with successive differences mapped into (-pi, pi]."""
    p = np.asarray(phase, dtype=np.float64)
    if p.size <= 1:
        return p.copy()
    d = np.diff(p, axis=0)
    wrapped = np.mod(d + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    out = np.empty_like(p)
    out[0] = p[0]
    np.cumsum(wrapped, axis=0, out=out[1:])
    out[1:] += p[0]
    return out


def _clamp_window(window: int, n: int) -> int:
    w = min(int(window), n)
    if w % 2 == 0:
        w -= 1
    return max(w, 3)


def _sliding_median(x: np.ndarray, window: int) -> np.ndarray:
    """Centered running median with truncated (shrinking) edge windows."""
    w = _clamp_window(window, x.shape[0])
    med = pd.DataFrame(x).rolling(w, center=True, min_periods=1).median().to_numpy()
    return med.reshape(x.shape)


def hampel_trend(x, window: int = DEFAULT_TREND_WINDOW,
                 t: float = DEFAULT_HAMPEL_THRESHOLD) -> tuple[np.ndarray, np.ndarray]:
    """Split a series into (trend, detrended); trend + detrended == x exactly.

    Samples deviating from the local median by more than ``t`` times the
    global standard deviation join the trend as the median value; the rest
    pass through unchanged.  Works column-wise on 2-D input.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValidationError("hampel_trend needs a non-empty series")
    if t <= 0:
        raise ValidationError("threshold multiplier must be positive")
    sigma = np.std(x, axis=0)
    med = _sliding_median(x, window)
    outlier = np.abs(x - med) > t * sigma
    trend = np.where(outlier, med, x)
    return trend, x - trend


def hampel_denoise(x, window: int = DEFAULT_DENOISE_WINDOW,
                   t: float = DEFAULT_HAMPEL_THRESHOLD) -> np.ndarray:
    """Replace outliers (vs. the local median) by the median itself."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValidationError("hampel_denoise needs a non-empty series")
    if t <= 0:
        raise ValidationError("threshold multiplier must be positive")
    sigma = np.std(x, axis=0)
    med = _sliding_median(x, window)
    return np.where(np.abs(x - med) > t * sigma, med, x)


def downsample(x, factor: int) -> np.ndarray:
    """Keep every ``factor``-th sample after an anti-alias low-pass.

    The filter is a 101-tap symmetric FIR cut at 0.8x the output Nyquist,
    applied as a centered convolution (zero phase).  Output length is
    ceil(len/factor).
    """
    x = np.asarray(x, dtype=np.float64)
    if factor < 1:
        raise ValidationError("downsample factor must be >= 1")
    if factor == 1:
        return x.copy()
    taps = firwin(AA_TAPS, AA_CUTOFF / factor)
    if x.ndim == 1:
        filtered = np.convolve(x, taps, mode="same")
    else:
        filtered = np.apply_along_axis(lambda col: np.convolve(col, taps, mode="same"),
                                       0, x)
    return filtered[::factor]


def preprocess_pair(c: CsiCapture, pair: BeamPair,
                    trend_window: int = DEFAULT_TREND_WINDOW,
                    trend_threshold: float = DEFAULT_HAMPEL_THRESHOLD,
                    denoise_window: int = DEFAULT_DENOISE_WINDOW,
                    denoise_threshold: float = DEFAULT_HAMPEL_THRESHOLD,
                    factor: int = DEFAULT_DOWNSAMPLE) -> list[PhaseSeries]:
    """One PhaseSeries per subcarrier for an (ideally calibrated) capture.

    Chain per subcarrier: unwrap over time, wide-window Hampel detrend,
    narrow-window Hampel denoise, anti-aliased decimation.
    """
    raw = np.angle(slice_pair(c, pair))          # [n_symbols x n_subcarriers]
    u = unwrap(raw)
    _, detrended = hampel_trend(u, trend_window, trend_threshold)
    den = hampel_denoise(detrended, denoise_window, denoise_threshold)
    down = downsample(den, factor)
    fs = c.meta.symbol_rate / factor
    return [PhaseSeries(pair=pair, subcarrier=f, fs=fs, samples=down[:, f])
            for f in range(c.meta.n_subcarriers)]
