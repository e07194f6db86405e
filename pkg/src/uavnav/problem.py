"""Receding-horizon tracking problem with parametric obstacle penalties.

The decision variable is the stacked input sequence z in R^(3N); states
are eliminated by the Euler prediction model, so the cost and every
constraint residual are plain functions of z and a fixed-size parameter
vector.  The parameter vector always carries the same number of circle
and rectangle slots so the optimizer sees one problem shape regardless
of how many obstacles are currently visible; unused slots hold far-away
fillers whose residuals vanish identically in the workspace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from . import _kernels
from .constraints import (
    CIRCLE_PARAM_LEN,
    CIRCLE_SLOTS,
    RECT_PARAM_LEN,
    RECT_SLOTS,
    CircleObstacle,
    RateBounds,
    RectObstacle,
    far_circle,
    far_rect,
    rect_from_segment,
)
from .geom import LineSegment, point_segment_distance
from .model import INPUT_DIM, STATE_DIM, ModelParams


@dataclass(frozen=True)
class CostWeights:
    """Diagonal weights of the three quadratic cost terms."""

    state: tuple[float, ...] = (2.0, 2.0, 40.0, 5.0, 5.0, 5.0, 8.0, 8.0)
    input: tuple[float, ...] = (5.0, 10.0, 10.0)
    input_change: tuple[float, ...] = (10.0, 20.0, 20.0)

    def __post_init__(self) -> None:
        if len(self.state) != STATE_DIM or len(self.input) != INPUT_DIM:
            raise ValueError("weight lengths must match state/input dimensions")
        if len(self.input_change) != INPUT_DIM:
            raise ValueError("weight lengths must match state/input dimensions")
        if min(self.state) < 0 or min(self.input) < 0 or min(self.input_change) < 0:
            raise ValueError("cost weights must be nonnegative")


@dataclass(frozen=True)
class HorizonConfig:
    """Prediction horizon length and sampling time."""

    steps: int = 40
    ts: float = 0.05

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError(f"horizon needs at least one step, got {self.steps}")
        if self.ts <= 0.0:
            raise ValueError(f"sampling time must be positive, got {self.ts}")


@dataclass
class ParameterVector:
    """Everything that changes between consecutive optimizer calls.

    Obstacle arrays always have the full slot capacity: circles is
    (circle_slots, 3) as (cx, cy, radius), rects is (rect_slots, 12) as
    four unit normals followed by four offsets.  ``n_active_circles`` and
    ``n_active_rects`` count the leading rows that hold real obstacles;
    the remaining rows are far-away fillers whose residuals are exactly
    zero, so the solve may skip them.  Both default to the full capacity,
    which is always correct, just slower.
    """

    x_hat: NDArray[np.float64]
    x_ref: NDArray[np.float64]
    u_ref: NDArray[np.float64]
    u_prev: NDArray[np.float64]
    circles: NDArray[np.float64]
    rects: NDArray[np.float64]
    n_active_circles: int | None = None
    n_active_rects: int | None = None

    def __post_init__(self) -> None:
        self.x_hat = np.asarray(self.x_hat, dtype=float).reshape(STATE_DIM)
        self.x_ref = np.asarray(self.x_ref, dtype=float).reshape(STATE_DIM)
        self.u_ref = np.asarray(self.u_ref, dtype=float).reshape(INPUT_DIM)
        self.u_prev = np.asarray(self.u_prev, dtype=float).reshape(INPUT_DIM)
        self.circles = np.ascontiguousarray(self.circles, dtype=float)
        self.rects = np.ascontiguousarray(self.rects, dtype=float)
        if self.circles.ndim != 2 or self.circles.shape[1] != CIRCLE_PARAM_LEN:
            raise ValueError("circle slots must be an (n, 3) array")
        if self.rects.ndim != 2 or self.rects.shape[1] != RECT_PARAM_LEN:
            raise ValueError("rect slots must be an (n, 12) array")
        if self.n_active_circles is None:
            self.n_active_circles = self.circles.shape[0]
        if self.n_active_rects is None:
            self.n_active_rects = self.rects.shape[0]
        if not 0 <= self.n_active_circles <= self.circles.shape[0]:
            raise ValueError("active circle count outside slot capacity")
        if not 0 <= self.n_active_rects <= self.rects.shape[0]:
            raise ValueError("active rect count outside slot capacity")

    @property
    def active_circles(self) -> NDArray[np.float64]:
        """Leading circle rows that hold real obstacles."""
        return self.circles[: self.n_active_circles]

    @property
    def active_rects(self) -> NDArray[np.float64]:
        """Leading rect rows that hold real obstacles."""
        return self.rects[: self.n_active_rects]

    def as_vector(self) -> NDArray[np.float64]:
        """Flatten to one numeric vector (fixed length for fixed slots)."""
        return np.concatenate(
            [
                self.x_hat,
                self.x_ref,
                self.u_ref,
                self.u_prev,
                self.circles.ravel(),
                self.rects.ravel(),
            ]
        )

    @classmethod
    def from_vector(
        cls,
        vec: NDArray[np.floating],
        circle_slots: int = CIRCLE_SLOTS,
        rect_slots: int = RECT_SLOTS,
    ) -> "ParameterVector":
        vec = np.asarray(vec, dtype=float).ravel()
        expected = 2 * STATE_DIM + 2 * INPUT_DIM
        expected += circle_slots * CIRCLE_PARAM_LEN + rect_slots * RECT_PARAM_LEN
        if vec.shape[0] != expected:
            raise ValueError(f"parameter vector must have length {expected}, got {vec.shape[0]}")
        k = 0
        x_hat = vec[k : k + STATE_DIM]
        k += STATE_DIM
        x_ref = vec[k : k + STATE_DIM]
        k += STATE_DIM
        u_ref = vec[k : k + INPUT_DIM]
        k += INPUT_DIM
        u_prev = vec[k : k + INPUT_DIM]
        k += INPUT_DIM
        circles = vec[k : k + circle_slots * CIRCLE_PARAM_LEN].reshape(
            circle_slots, CIRCLE_PARAM_LEN
        )
        k += circle_slots * CIRCLE_PARAM_LEN
        rects = vec[k:].reshape(rect_slots, RECT_PARAM_LEN)
        return cls(x_hat, x_ref, u_ref, u_prev, circles, rects)


def pack_parameters(
    x_hat: NDArray[np.floating],
    x_ref: NDArray[np.floating],
    u_ref: NDArray[np.floating],
    u_prev: NDArray[np.floating],
    circles: list[CircleObstacle],
    segments: list[LineSegment],
    margin: float,
    keep_radius: float = 3.0,
    circle_slots: int = CIRCLE_SLOTS,
    rect_slots: int = RECT_SLOTS,
) -> ParameterVector:
    """Build the parameter vector from the current detections.

    Only obstacles whose nearest point lies within ``keep_radius`` of the
    vehicle are kept (the horizon cannot reach further anyway); survivors
    are sorted nearest first and truncated to the slot capacity.  Wall
    segments are inflated into keep-out rectangles by ``margin`` here;
    detected circles are expected to carry their margin already.
    """
    x_hat = np.asarray(x_hat, dtype=float).reshape(STATE_DIM)
    p = x_hat[0:2]

    def circle_distance(c: CircleObstacle) -> float:
        return max(0.0, float(np.linalg.norm(p - c.center)) - c.radius)

    kept_c = sorted(
        (c for c in circles if circle_distance(c) <= keep_radius), key=circle_distance
    )[:circle_slots]
    kept_s = sorted(
        (s for s in segments if point_segment_distance(p, s) <= keep_radius),
        key=lambda s: point_segment_distance(p, s),
    )[:rect_slots]

    circle_rows = [c.params() for c in kept_c]
    circle_rows += [far_circle().params()] * (circle_slots - len(circle_rows))
    rect_rows = [rect_from_segment(s, margin).params() for s in kept_s]
    rect_rows += [far_rect().params()] * (rect_slots - len(rect_rows))

    return ParameterVector(
        x_hat=x_hat,
        x_ref=np.asarray(x_ref, dtype=float),
        u_ref=np.asarray(u_ref, dtype=float),
        u_prev=np.asarray(u_prev, dtype=float),
        circles=np.vstack(circle_rows),
        rects=np.vstack(rect_rows),
        n_active_circles=len(kept_c),
        n_active_rects=len(kept_s),
    )


def rect_obstacles(rho: ParameterVector) -> list[RectObstacle]:
    """Rectangle slots of a parameter vector as constraint objects."""
    return [RectObstacle.from_params(row) for row in rho.rects]


def circle_obstacles(rho: ParameterVector) -> list[CircleObstacle]:
    """Circle slots of a parameter vector as constraint objects."""
    return [CircleObstacle.from_params(row) for row in rho.circles]


class NmpcProblem:
    """Immutable bundle of model, weights, horizon and rate limits.

    Exposes the cost, the penalized objective with gradient, and the
    constraint norms, all as functions of the flat input vector and a
    parameter vector.  Instances precompile the numeric kernels on
    construction so solve-time calls never hit the JIT.
    """

    def __init__(
        self,
        model: ModelParams,
        weights: CostWeights,
        horizon: HorizonConfig,
        rate_bounds: RateBounds,
        circle_slots: int = CIRCLE_SLOTS,
        rect_slots: int = RECT_SLOTS,
    ) -> None:
        if abs(model.ts - horizon.ts) > 1e-12:
            raise ValueError(
                f"model ts {model.ts} and horizon ts {horizon.ts} must agree"
            )
        self.model = model
        self.weights = weights
        self.horizon = horizon
        self.rate_bounds = rate_bounds
        self.circle_slots = circle_slots
        self.rect_slots = rect_slots
        self._qx = np.asarray(weights.state, dtype=float)
        self._qu = np.asarray(weights.input, dtype=float)
        self._qdu = np.asarray(weights.input_change, dtype=float)
        _warm_up()

    @property
    def n_vars(self) -> int:
        """Length of the flat decision vector."""
        return INPUT_DIM * self.horizon.steps

    def _u2d(self, z: NDArray[np.floating]) -> NDArray[np.float64]:
        z = np.ascontiguousarray(z, dtype=float).ravel()
        if z.shape[0] != self.n_vars:
            raise ValueError(f"expected {self.n_vars} decision variables, got {z.shape[0]}")
        return z.reshape(self.horizon.steps, INPUT_DIM)

    def _model_args(self) -> tuple[float, ...]:
        m = self.model
        return (
            m.g,
            m.ts,
            m.tau_phi,
            m.tau_theta,
            m.k_phi,
            m.k_theta,
            m.drag[0],
            m.drag[1],
            m.drag[2],
        )

    def cost(self, z: NDArray[np.floating], rho: ParameterVector) -> float:
        """Tracking cost of the input sequence, no penalty term."""
        value, cost, _pen, _grad = _kernels.penalized_value_grad(
            self._u2d(z),
            rho.x_hat,
            rho.x_ref,
            rho.u_ref,
            rho.u_prev,
            self._qx,
            self._qu,
            self._qdu,
            rho.circles,
            rho.rects,
            self.rate_bounds.dphi_max,
            self.rate_bounds.dtheta_max,
            0.0,
            *self._model_args(),
        )
        return float(cost)

    def penalized(
        self, z: NDArray[np.floating], rho: ParameterVector, q: float
    ) -> tuple[float, NDArray[np.float64]]:
        """Value and gradient of cost + q * ||G||^2 at z."""
        value, _cost, _pen, grad = _kernels.penalized_value_grad(
            self._u2d(z),
            rho.x_hat,
            rho.x_ref,
            rho.u_ref,
            rho.u_prev,
            self._qx,
            self._qu,
            self._qdu,
            rho.circles,
            rho.rects,
            self.rate_bounds.dphi_max,
            self.rate_bounds.dtheta_max,
            float(q),
            *self._model_args(),
        )
        return float(value), grad.ravel()

    def gradient(
        self, z: NDArray[np.floating], rho: ParameterVector, q: float
    ) -> NDArray[np.float64]:
        """Gradient of the penalized objective (flat, length 3N)."""
        return self.penalized(z, rho, q)[1]

    def kernel_args(self, rho: ParameterVector, q: float) -> tuple:
        """Argument tuple consumed by the compiled objective and solver.

        Filler slots carry exactly zero residual and gradient, so only
        the active obstacle rows are handed to the kernels; the result
        is bitwise identical to evaluating the full capacity.
        """
        return (
            rho.x_hat,
            rho.x_ref,
            rho.u_ref,
            rho.u_prev,
            self._qx,
            self._qu,
            self._qdu,
            rho.active_circles,
            rho.active_rects,
            self.rate_bounds.dphi_max,
            self.rate_bounds.dtheta_max,
            float(q),
            *self._model_args(),
        )

    def constraint_norms(
        self, z: NDArray[np.floating], rho: ParameterVector
    ) -> tuple[float, float]:
        """(max residual, Euclidean norm) of G at z."""
        gmax, gtwo = _kernels.constraint_norms(
            self._u2d(z),
            rho.x_hat,
            rho.u_prev,
            rho.active_circles,
            rho.active_rects,
            self.rate_bounds.dphi_max,
            self.rate_bounds.dtheta_max,
            *self._model_args(),
        )
        return float(gmax), float(gtwo)


_WARMED = False


def _warm_up() -> None:
    """Compile the kernels once with representative argument types."""
    global _WARMED
    if _WARMED:
        return
    u = np.zeros((2, INPUT_DIM))
    x0 = np.zeros(STATE_DIM)
    arrs = (
        np.zeros(STATE_DIM),
        np.zeros(INPUT_DIM),
        np.zeros(INPUT_DIM),
        np.ones(STATE_DIM),
        np.ones(INPUT_DIM),
        np.ones(INPUT_DIM),
    )
    circles = np.tile(far_circle().params(), (2, 1))
    rects = np.tile(far_rect().params(), (2, 1))
    margs = (9.81, 0.05, 0.23, 0.25, 1.0, 1.0, 0.1, 0.1, 0.2)
    _kernels.penalized_value_grad(
        u, x0, *arrs, circles, rects, 0.08, 0.08, 1.0, *margs
    )
    _kernels.constraint_norms(
        u, x0, np.zeros(INPUT_DIM), circles, rects, 0.08, 0.08, *margs
    )
    lower = np.tile(np.array([5.0, -0.2, -0.2]), 2)
    upper = np.tile(np.array([13.5, 0.2, 0.2]), 2)
    _kernels.panoc_stage(
        np.tile(np.array([9.81, 0.0, 0.0]), 2),
        x0,
        *arrs,
        circles,
        rects,
        0.08,
        0.08,
        1.0,
        *margs,
        lower,
        upper,
        1e-3,
        3,
        10,
        -1.0,
    )
    _WARMED = True
