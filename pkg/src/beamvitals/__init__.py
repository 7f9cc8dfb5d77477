"""Breathing and heart-rate estimation from multi-beam mmWave OFDM CSI."""

from .capture import BeamPair, CaptureMeta, CsiCapture, read_capture, slice_pair, write_capture
from .config import Config
from .errors import (BeamVitalsError, CorruptionError, EstimationError, FormatError,
                     InsufficientPeaksError, ValidationError)
from .synth import (GroundTruth, ImpairmentSpec, ScenarioSpec, TargetSpec, generate,
                    scenario_from_json, scenario_to_json)

__version__ = "0.1.0"

__all__ = [
    "BeamPair", "CaptureMeta", "CsiCapture", "read_capture", "slice_pair",
    "write_capture", "Config", "BeamVitalsError", "CorruptionError",
    "EstimationError", "FormatError", "InsufficientPeaksError", "ValidationError",
    "GroundTruth", "ImpairmentSpec", "ScenarioSpec", "TargetSpec", "generate",
    "scenario_from_json", "scenario_to_json", "__version__",
]
