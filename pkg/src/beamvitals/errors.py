"""Exception hierarchy shared across the package."""


class BeamVitalsError(Exception):
    """Base class for all package-specific errors."""


class FormatError(BeamVitalsError):
    """File is not a recognizable capture (bad magic or header)."""


class CorruptionError(BeamVitalsError):
    """Header and payload disagree (truncated or oversized file)."""


class ValidationError(BeamVitalsError, ValueError):
    """An input violates a documented invariant."""


class InsufficientPeaksError(BeamVitalsError):
    """Too few valid peaks survive to form an interval estimate."""


class EstimationError(BeamVitalsError):
    """No subcarrier produced a usable rate contribution."""
