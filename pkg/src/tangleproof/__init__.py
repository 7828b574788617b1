"""Discrete-time tangle DAG simulator with bottleneck forcing and verification."""

from .engine import Trace, completions_at, delta_of, replay, run, sample_decision
from .model import (
    ArrivalDecision,
    ModelParams,
    TangleState,
    apply_step,
    degrees,
    new_genesis,
    reference_params,
    tips_at_lookback,
)

__version__ = "0.1.0"

__all__ = [
    "ArrivalDecision",
    "ModelParams",
    "TangleState",
    "Trace",
    "apply_step",
    "completions_at",
    "degrees",
    "delta_of",
    "new_genesis",
    "reference_params",
    "replay",
    "run",
    "sample_decision",
    "tips_at_lookback",
]
