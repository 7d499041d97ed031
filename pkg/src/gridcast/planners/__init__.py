"""Trajectory planners consuming prediction stacks."""

from .anastar import Path, PlanNode, PlanResult, TrackingGains, ana_star, track_path
from .mppi import (
    DegenerateRolloutError,
    MppiConfig,
    MppiDiagnostics,
    Rollout,
    mppi_cost,
    mppi_step,
    mppi_weights,
    shift_nominal,
)

__all__ = [
    "Path",
    "PlanNode",
    "PlanResult",
    "TrackingGains",
    "ana_star",
    "track_path",
    "DegenerateRolloutError",
    "MppiConfig",
    "MppiDiagnostics",
    "Rollout",
    "mppi_cost",
    "mppi_step",
    "mppi_weights",
    "shift_nominal",
]
