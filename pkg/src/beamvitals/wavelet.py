"""Periodized Daubechies wavelet cascade with exact reconstruction.

Analysis correlates the signal with circularly shifted filter rows and the
synthesis step is the adjoint; because the shifted rows form an
orthonormal basis for any even length, decompose-then-reconstruct is exact
to machine precision.  Odd-length levels are extended by repeating the
last sample before filtering and truncated again on the way back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# Daubechies analysis low-pass taps (orthonormal, sum = sqrt(2)).
_DB4_LO = np.array([
    -0.010597401784997278,
    0.032883011666982945,
    0.030841381835986965,
    -0.18703481171888114,
    -0.02798376941698385,
    0.6308807679295904,
    0.7148465705525415,
    0.23037781330885523,
])

_DB2_LO = np.array([
    -0.12940952255092145,
    0.22414386804185735,
    0.836516303737469,
    0.48296291314469025,
])

WAVELETS = {"db2": _DB2_LO, "db4": _DB4_LO}


def _filters(name: str) -> tuple[np.ndarray, np.ndarray]:
    if name not in WAVELETS:
        raise ValidationError(f"unknown wavelet {name!r}; available: {sorted(WAVELETS)}")
    lo = WAVELETS[name]
    k = np.arange(lo.size)
    hi = ((-1.0) ** (k + 1)) * lo[::-1]
    return lo, hi


@dataclass
class DwtDecomp:
    """Cascade output: one approximation vector plus detail vectors per level.

    ``details[i]`` holds level i+1; ``input_lengths`` records the length
    entering each analysis step so reconstruction can undo odd-length
    padding.  The effective sampling rate halves at every level.
    """

    approx: np.ndarray
    details: list
    levels: int
    wavelet: str
    fs: float
    input_lengths: list

    @property
    def fs_per_level(self) -> list:
        return [self.fs / 2.0 ** (i + 1) for i in range(self.levels)]


def _analysis_step(x: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    n_in = x.shape[0]
    if n_in % 2:
        x = np.concatenate([x, x[-1:]], axis=0)
    n = x.shape[0]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(lo.size)[None, :]) % n
    windows = x[idx]  # [n/2, taps, ...]
    a = np.tensordot(windows, lo, axes=([1], [0]))
    d = np.tensordot(windows, hi, axes=([1], [0]))
    return a, d, n_in


def _synthesis_step(a: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                    out_len: int) -> np.ndarray:
    n = 2 * a.shape[0]
    x = np.zeros((n,) + a.shape[1:], dtype=np.float64)
    positions = 2 * np.arange(a.shape[0])
    for tap in range(lo.size):
        # (2k + tap) mod n visits distinct positions, so += is safe
        x[(positions + tap) % n] += a * lo[tap] + d * hi[tap]
    return x[:out_len]


def dwt_decompose(x, levels: int, wavelet: str = "db4", fs: float = 0.0) -> DwtDecomp:
    """Mallat cascade; each level halves length (ceil) and sampling rate.

    Accepts 1-D series or a 2-D [samples x channels] matrix.
    """
    x = np.asarray(x, dtype=np.float64)
    if levels < 1:
        raise ValidationError("levels must be >= 1")
    lo, hi = _filters(wavelet)
    if x.shape[0] < lo.size * 2 ** levels:
        raise ValidationError(
            f"series of {x.shape[0]} samples too short for {levels} levels "
            f"(need >= {lo.size * 2 ** levels})")
    details = []
    lengths = []
    a = x
    for _ in range(levels):
        a, d, n_in = _analysis_step(a, lo, hi)
        details.append(d)
        lengths.append(n_in)
    return DwtDecomp(approx=a, details=details, levels=levels, wavelet=wavelet,
                     fs=fs, input_lengths=lengths)


def reconstruct(dec: DwtDecomp, keep_approx: bool = True,
                keep_details=None) -> np.ndarray:
    """Invert the cascade, optionally zeroing branches.

    ``keep_details`` is a set of 1-based level numbers to retain; ``None``
    with ``keep_approx=True`` reproduces the input exactly.
    """
    lo, hi = _filters(dec.wavelet)
    keep = set(range(1, dec.levels + 1)) if keep_details is None else set(keep_details)
    a = dec.approx if keep_approx else np.zeros_like(dec.approx)
    for level in range(dec.levels, 0, -1):
        d = dec.details[level - 1]
        if level not in keep:
            d = np.zeros_like(d)
        a = _synthesis_step(a, d, lo, hi, dec.input_lengths[level - 1])
    return a


def band_reconstruction(x, levels: int, wavelet: str = "db4") -> np.ndarray:
    """Approximation-branch reconstruction (details zeroed)."""
    dec = dwt_decompose(x, levels, wavelet)
    return reconstruct(dec, keep_approx=True, keep_details=set())
