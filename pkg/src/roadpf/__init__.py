"""Catheter tip tracking with a particle filter and ECG-gated dynamic roadmapping."""
__version__ = "0.1.0"

from ._accel import backend
from .core import Frame, MotionField, ParticleSet, Polyline, ProbabilityMap, TipState, gaussian_map
from .errors import (FormatError, InsufficientDataError, InvalidInputError, InvalidParameterError,
                     InvalidStateError, PipelineError, RoadpfError)
from .filter import FilterParams, Tracker, TrackResult, track
from .flow import FlowEstimator, FlowParams, estimate_flow

__all__ = [
    "backend", "Frame", "MotionField", "ParticleSet", "Polyline", "ProbabilityMap", "TipState",
    "gaussian_map", "FormatError", "InsufficientDataError", "InvalidInputError",
    "InvalidParameterError", "InvalidStateError", "PipelineError", "RoadpfError",
    "FilterParams", "Tracker", "TrackResult", "track", "FlowEstimator", "FlowParams",
    "estimate_flow",
]
