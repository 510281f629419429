"""Stereo multi-object track post-processing.

Turns per-camera 2D track files into 3D tracks and scores tracking output
against ground truth.
"""

from .errors import (
    CalibrationError,
    ConfigError,
    ConvergenceError,
    DataError,
    DegenerateGeometryError,
    MotFormatError,
    NumericalError,
    PointAtInfinityError,
    StereoTrackError,
)
from .mot_io import StereoRig, TrackRecord, TrackSet, load_calibration, parse_mot, parse_tracker_output

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "DegenerateGeometryError",
    "MotFormatError",
    "NumericalError",
    "PointAtInfinityError",
    "StereoRig",
    "StereoTrackError",
    "TrackRecord",
    "TrackSet",
    "load_calibration",
    "parse_mot",
    "parse_tracker_output",
    "__version__",
]
