"""Speculative constant-velocity sampling for flow-matching ODEs."""

from ._backend import BACKEND
from .analysis import (
    BoundReport,
    DeviationReport,
    bound_check,
    deviation_report,
    epsilon_for_tolerance,
    lemma_bound,
)
from .core import FieldRegularity, RunStats, SpecConfig, TimeGrid, VelocityField, make_uniform_grid, mse
from .fields import (
    ConstantField,
    GaussianBridgeField,
    LinearField,
    RotationField,
    TabulatedField,
    TinyMLPField,
    estimate_curvature,
    estimate_lipschitz,
    load_field,
    load_tabulated,
    resolve_field,
)
from .integrator import SpecTrace, Trajectory, flowcast, full_euler, reference_solution

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BoundReport",
    "ConstantField",
    "DeviationReport",
    "FieldRegularity",
    "GaussianBridgeField",
    "LinearField",
    "RotationField",
    "RunStats",
    "SpecConfig",
    "SpecTrace",
    "TabulatedField",
    "TimeGrid",
    "TinyMLPField",
    "Trajectory",
    "VelocityField",
    "bound_check",
    "deviation_report",
    "epsilon_for_tolerance",
    "estimate_curvature",
    "estimate_lipschitz",
    "flowcast",
    "full_euler",
    "lemma_bound",
    "load_field",
    "load_tabulated",
    "make_uniform_grid",
    "mse",
    "reference_solution",
    "resolve_field",
]
