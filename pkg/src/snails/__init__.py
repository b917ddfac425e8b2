"""Brownian snails: an SIR epidemic among diffusing particles, with a
statistical verification harness."""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import (ConsistencyError, ContainmentViolation, InvalidParameterError, LogParseError,
                     ResourceLimitError, SnailsError)
from .model import INSTANT, EventLog, Mode, ModelParams, SimState, auto_window, infect_closure, init_configuration, run, step
from .neighbors import NeighborIndex, build_index, gilbert_cluster, percolation_scan
from .observables import RunResult, integral_I, occupation_time, summarize
from .rng import Box, RngStream, bridge_crossing_probability, sample_poisson_points

__all__ = [
    "Box", "ConsistencyError", "ContainmentViolation", "EventLog", "INSTANT", "InvalidParameterError",
    "LogParseError", "Mode", "ModelParams", "NeighborIndex", "ResourceLimitError", "RngStream", "RunResult",
    "SimState", "SnailsError", "auto_window", "bridge_crossing_probability", "build_index", "gilbert_cluster",
    "infect_closure", "init_configuration", "integral_I", "occupation_time", "percolation_scan", "run",
    "sample_poisson_points", "step", "summarize",
]
