"""Reactive obstacle-avoidance navigation stack for a simulated quadrotor.

Modules
-------
model        lag-abstracted quadrotor dynamics, prediction and plant steps
constraints  positive-part obstacle and input-rate residuals
problem      penalized tracking problem over the stacked input sequence
solver       box-constrained inner solver and the quadratic penalty loop
perception   planar range sensor, scan clustering, circle/wall fitting
apf          potential-field baselines and their force pipeline
harness      closed-loop scenario runner, metrics and telemetry output
"""

from .constraints import (
    CircleObstacle,
    RateBounds,
    RectObstacle,
    assemble_residuals,
    circle_residual,
    positive_part,
    rect_from_segment,
    rect_residual,
)
from .geom import LineSegment
from .model import ModelParams, hover_input, hover_state
from .problem import CostWeights, HorizonConfig, NmpcProblem, ParameterVector, pack_parameters
from .solver import (
    BoxBounds,
    SolverConfig,
    SolverOutput,
    panoc_solve,
    penalty_solve,
    project_box,
    warm_start_shift,
)

__all__ = [
    "BoxBounds",
    "CircleObstacle",
    "CostWeights",
    "HorizonConfig",
    "LineSegment",
    "ModelParams",
    "NmpcProblem",
    "ParameterVector",
    "RateBounds",
    "RectObstacle",
    "SolverConfig",
    "SolverOutput",
    "assemble_residuals",
    "circle_residual",
    "hover_input",
    "hover_state",
    "pack_parameters",
    "panoc_solve",
    "penalty_solve",
    "positive_part",
    "project_box",
    "rect_from_segment",
    "rect_residual",
    "warm_start_shift",
]

__version__ = "0.1.0"
