"""Simulator for interleaved consensus and projected gradient descent on
multiple parameter servers, with runtime checks of the convergence bounds."""

__version__ = "0.1.0"

from .domain import BoxSet, ConfigurationError, norm2, project
from .objectives import QuadraticObjective, compute_bounds, evaluate_sum, gradient
from .engine import ExperimentConfig, ExperimentTrace, run

__all__ = [
    "BoxSet",
    "ConfigurationError",
    "ExperimentConfig",
    "ExperimentTrace",
    "QuadraticObjective",
    "compute_bounds",
    "evaluate_sum",
    "gradient",
    "norm2",
    "project",
    "run",
]
