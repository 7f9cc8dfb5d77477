"""Multi-beam CSI capture container and the CSIV1 on-disk format.

A capture holds the complex channel transfer function for every
(symbol, rx beam, tx beam, subcarrier) cell.  Files store the tensor as
little-endian interleaved float32 (re, im) after a one-line JSON header,
so identical captures always serialize to identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np

from .errors import CorruptionError, FormatError, ValidationError

MAGIC = b"CSIV1\n"

_META_FIELDS = (
    "center_frequency",
    "bandwidth",
    "subcarrier_spacing",
    "n_subcarriers",
    "n_symbols",
    "n_rx_beams",
    "n_tx_beams",
    "symbol_rate",
    "capture_duration",
)


@dataclass(frozen=True)
class CaptureMeta:
    """Capture geometry and sampling description.

    ``subcarrier_spacing`` is the grid spacing of the underlying OFDM
    waveform; the pilots actually captured are spread evenly over
    ``bandwidth``, so delay-domain math uses :attr:`effective_spacing`
    instead.
    """

    center_frequency: float
    bandwidth: float
    subcarrier_spacing: float
    n_subcarriers: int
    n_symbols: int
    n_rx_beams: int
    n_tx_beams: int
    symbol_rate: float
    capture_duration: float

    def __post_init__(self):
        if self.n_subcarriers < 2:
            raise ValidationError("n_subcarriers must be >= 2")
        if self.n_rx_beams < 1 or self.n_tx_beams < 1:
            raise ValidationError("beam counts must be >= 1")
        if self.center_frequency <= 0 or self.bandwidth <= 0:
            raise ValidationError("center_frequency and bandwidth must be positive")
        if self.subcarrier_spacing <= 0:
            raise ValidationError("subcarrier_spacing must be positive")
        if self.symbol_rate <= 0 or self.capture_duration <= 0:
            raise ValidationError("symbol_rate and capture_duration must be positive")
        if self.n_symbols != round(self.symbol_rate * self.capture_duration):
            raise ValidationError(
                f"n_symbols={self.n_symbols} inconsistent with "
                f"symbol_rate*capture_duration="
                f"{self.symbol_rate * self.capture_duration:g}"
            )
        if self.bandwidth < (self.n_subcarriers - 1) * self.subcarrier_spacing:
            raise ValidationError("bandwidth too small for the declared subcarrier grid")

    @property
    def effective_spacing(self) -> float:
        """Pilot-to-pilot spacing in Hz: bandwidth / (n_subcarriers - 1)."""
        return self.bandwidth / (self.n_subcarriers - 1)

    def subcarrier_frequency(self, n_f: int) -> float:
        """Absolute frequency of grid index ``n_f`` (0-based, band-centered)."""
        if not 0 <= n_f < self.n_subcarriers:
            raise ValidationError(f"subcarrier index {n_f} out of range")
        offset = n_f - (self.n_subcarriers - 1) / 2.0
        return self.center_frequency + offset * self.effective_spacing

    @property
    def frequencies(self) -> np.ndarray:
        idx = np.arange(self.n_subcarriers)
        return self.center_frequency + (idx - (self.n_subcarriers - 1) / 2.0) * self.effective_spacing

    def to_header(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class BeamPair:
    """One transmit/receive beam combination, 1-based ids as on the hardware."""

    tx_index: int
    rx_index: int

    def validate_for(self, meta: CaptureMeta) -> None:
        if not 1 <= self.tx_index <= meta.n_tx_beams:
            raise ValidationError(
                f"tx beam {self.tx_index} out of range 1..{meta.n_tx_beams}")
        if not 1 <= self.rx_index <= meta.n_rx_beams:
            raise ValidationError(
                f"rx beam {self.rx_index} out of range 1..{meta.n_rx_beams}")


class CsiCapture:
    """Immutable CSI tensor indexed [symbol][rx][tx][subcarrier].

    The tensor is stored as complex128 for downstream math but must be
    float32-representable so files round-trip bit exactly; generators and
    readers enforce that by passing data through a complex64 cast.
    """

    def __init__(self, meta: CaptureMeta, h: np.ndarray):
        h = np.asarray(h, dtype=np.complex128)
        expected = (meta.n_symbols, meta.n_rx_beams, meta.n_tx_beams, meta.n_subcarriers)
        if h.shape != expected:
            raise ValidationError(f"tensor shape {h.shape} != meta shape {expected}")
        if not np.all(np.isfinite(h)):
            raise ValidationError("capture tensor contains non-finite values")
        h.flags.writeable = False
        self.meta = meta
        self.h = h

    def __eq__(self, other) -> bool:
        if not isinstance(other, CsiCapture):
            return NotImplemented
        return self.meta == other.meta and np.array_equal(self.h, other.h)

    def __repr__(self) -> str:
        return (f"CsiCapture({self.h.shape[0]} symbols, "
                f"{self.h.shape[1]}x{self.h.shape[2]} beams, "
                f"{self.h.shape[3]} subcarriers)")


def slice_pair(c: CsiCapture, pair: BeamPair) -> np.ndarray:
    """Read-only [n_symbols x n_subcarriers] view of one beam pair."""
    pair.validate_for(c.meta)
    return c.h[:, pair.rx_index - 1, pair.tx_index - 1, :]


def _header_bytes(meta: CaptureMeta) -> bytes:
    return json.dumps(meta.to_header(), sort_keys=True, separators=(",", ":")).encode("ascii") + b"\n"


def write_capture(c: CsiCapture, path) -> None:
    """Serialize a capture; identical captures produce identical bytes."""
    if not np.all(np.isfinite(c.h)):
        raise ValidationError("refusing to write capture with non-finite values")
    flat = np.ascontiguousarray(c.h).ravel()
    payload = np.empty((flat.size, 2), dtype="<f4")
    payload[:, 0] = flat.real
    payload[:, 1] = flat.imag
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_header_bytes(c.meta))
        f.write(payload.tobytes())


def read_capture(path) -> CsiCapture:
    """Load and fully validate a CSIV1 file."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(f"{path}: not a CSIV1 file (bad magic {magic!r})")
        header_line = f.readline()
        if not header_line.endswith(b"\n"):
            raise FormatError(f"{path}: truncated header")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: header is not valid JSON: {e}") from e
        if not isinstance(header, dict) or set(header) != set(_META_FIELDS):
            raise FormatError(f"{path}: header fields do not match the CSIV1 schema")
        try:
            meta = CaptureMeta(**header)
        except ValidationError as e:
            raise FormatError(f"{path}: invalid header: {e}") from e
        raw = f.read()

    count = meta.n_symbols * meta.n_rx_beams * meta.n_tx_beams * meta.n_subcarriers
    expected_bytes = 8 * count
    if len(raw) != expected_bytes:
        raise CorruptionError(
            f"{path}: payload is {len(raw)} bytes, header implies {expected_bytes}")
    pairs = np.frombuffer(raw, dtype="<f4").reshape(-1, 2)
    h = (pairs[:, 0].astype(np.float64) + 1j * pairs[:, 1].astype(np.float64)).reshape(
        meta.n_symbols, meta.n_rx_beams, meta.n_tx_beams, meta.n_subcarriers)
    if not np.all(np.isfinite(h)):
        raise ValidationError(f"{path}: payload contains non-finite values")
    return CsiCapture(meta, h)


def file_size_bytes(meta: CaptureMeta) -> int:
    """Exact on-disk size of a capture with this metadata."""
    count = meta.n_symbols * meta.n_rx_beams * meta.n_tx_beams * meta.n_subcarriers
    return len(MAGIC) + len(_header_bytes(meta)) + 8 * count


def table1_meta(n_symbols: int = 10000, n_rx_beams: int = 16, n_tx_beams: int = 2,
                n_subcarriers: int = 100, symbol_rate: float = 2000.0) -> CaptureMeta:
    """Testbed-shaped metadata: 26 GHz carrier, 20 MHz band, 100 pilots."""
    return CaptureMeta(
        center_frequency=26e9,
        bandwidth=20e6,
        subcarrier_spacing=15e3,
        n_subcarriers=n_subcarriers,
        n_symbols=n_symbols,
        n_rx_beams=n_rx_beams,
        n_tx_beams=n_tx_beams,
        symbol_rate=symbol_rate,
        capture_duration=n_symbols / symbol_rate,
    )

