"""Causal structure identification for dynamical control systems."""

from .causal import CausalGraph, PipelineConfig, TestResult, identify_structure
from .dynamics import LtiModel, NonlinearModel, Trajectory, TrajectoryBatch, simulate
from .sysid import EstimatedModel, fit, predict

__all__ = [
    "CausalGraph",
    "EstimatedModel",
    "LtiModel",
    "NonlinearModel",
    "PipelineConfig",
    "TestResult",
    "Trajectory",
    "TrajectoryBatch",
    "fit",
    "identify_structure",
    "predict",
    "simulate",
]
