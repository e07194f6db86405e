"""Parametric obstacle and input-rate constraints for the trajectory optimizer.

Every constraint is expressed through the positive-part building block
``positive_part(h) = max(0, h)``: a residual that is exactly zero on the
feasible side and grows smoothly enough inside the forbidden region that
the *squared* residual has a continuous gradient.  Stacking all residuals
into one vector G lets the optimizer treat obstacle avoidance and input
rate limits uniformly as a penalty ``q * ||G||^2``.

Circles cover cylinder-like obstacles.  Walls detected as line segments
become rectangles built from four half-planes: two parallel to the
segment offset by the safety margin, two perpendicular caps beyond the
endpoints.  Each half-plane is stored in normalized normal form
``a . p + c`` with a unit normal, which keeps the four factors on a
comparable scale regardless of wall orientation and has no singular
case for vertical walls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .geom import LineSegment
from .model import ModelParams, rollout

#: fixed parametric capacity: circle slots and rectangle slots
CIRCLE_SLOTS = 5
RECT_SLOTS = 10

#: empty obstacle slots live here, far outside any workspace
FAR_AWAY = 1.0e6

CIRCLE_PARAM_LEN = 3
RECT_PARAM_LEN = 12


def positive_part(h):
    """Elementwise max(0, h); the residual building block."""
    return np.maximum(h, 0.0)


@dataclass
class CircleObstacle:
    """Disc-shaped keep-out region (radius already includes any margin)."""

    center: NDArray[np.float64]
    radius: float

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, dtype=float).reshape(2)
        self.radius = float(self.radius)
        if self.radius <= 0.0:
            raise ValueError(f"circle radius must be positive, got {self.radius}")

    def params(self) -> NDArray[np.float64]:
        return np.array([self.center[0], self.center[1], self.radius])

    @classmethod
    def from_params(cls, vec: NDArray[np.floating]) -> "CircleObstacle":
        vec = np.asarray(vec, dtype=float).reshape(CIRCLE_PARAM_LEN)
        return cls(center=vec[:2], radius=float(vec[2]))


@dataclass
class RectObstacle:
    """Keep-out rectangle as the intersection of four half-planes.

    A point is inside exactly when ``normals @ p + offsets > 0`` holds in
    every row.  Rows 0 and 1 are the pair parallel to the source segment,
    rows 2 and 3 the perpendicular end caps.  Normals are unit length.
    """

    normals: NDArray[np.float64]
    offsets: NDArray[np.float64]

    def __post_init__(self) -> None:
        self.normals = np.asarray(self.normals, dtype=float).reshape(4, 2)
        self.offsets = np.asarray(self.offsets, dtype=float).reshape(4)
        lens = np.linalg.norm(self.normals, axis=1)
        if np.any(np.abs(lens - 1.0) > 1e-9):
            raise ValueError("half-plane normals must be unit length")

    def params(self) -> NDArray[np.float64]:
        return np.concatenate([self.normals.ravel(), self.offsets])

    @classmethod
    def from_params(cls, vec: NDArray[np.floating]) -> "RectObstacle":
        vec = np.asarray(vec, dtype=float).reshape(RECT_PARAM_LEN)
        return cls(normals=vec[:8].reshape(4, 2), offsets=vec[8:])

    # Slope-intercept views of the four edge lines, for inspection and
    # cross-checks against the classic formulation.  Undefined (raises)
    # when the respective line family is vertical.

    def _intercepts(self, rows: tuple[int, int]) -> tuple[float, float]:
        vals = []
        for r in rows:
            ax, ay = self.normals[r]
            if abs(ay) < 1e-12:
                raise ValueError("vertical line has no slope-intercept form")
            vals.append(-self.offsets[r] / ay)
        return max(vals), min(vals)

    @property
    def m_par(self) -> float:
        ax, ay = self.normals[0]
        if abs(ay) < 1e-12:
            raise ValueError("vertical line has no slope-intercept form")
        return -ax / ay

    @property
    def m_perp(self) -> float:
        ax, ay = self.normals[2]
        if abs(ay) < 1e-12:
            raise ValueError("vertical line has no slope-intercept form")
        return -ax / ay

    @property
    def b_par1(self) -> float:
        return self._intercepts((0, 1))[0]

    @property
    def b_par2(self) -> float:
        return self._intercepts((0, 1))[1]

    @property
    def b_perp1(self) -> float:
        return self._intercepts((2, 3))[0]

    @property
    def b_perp2(self) -> float:
        return self._intercepts((2, 3))[1]

    @property
    def precond(self) -> float:
        """Scale factor relating this form to the slope-intercept product."""
        return 1.0 / ((1.0 + self.m_par**2) * (1.0 + self.m_perp**2))

    def corners(self) -> NDArray[np.float64]:
        """The four corner points (intersections of adjacent edge lines)."""
        pts = []
        for i in (0, 1):
            for j in (2, 3):
                a = np.vstack([self.normals[i], self.normals[j]])
                b = -np.array([self.offsets[i], self.offsets[j]])
                pts.append(np.linalg.solve(a, b))
        return np.array(pts)


@dataclass(frozen=True)
class RateBounds:
    """Per-step magnitude limits on attitude command changes [rad]."""

    dphi_max: float = 0.08
    dtheta_max: float = 0.08

    def __post_init__(self) -> None:
        if self.dphi_max < 0.0 or self.dtheta_max < 0.0:
            raise ValueError("rate bounds must be nonnegative")


def circle_residual(p: NDArray[np.floating], circle: CircleObstacle) -> float:
    """Positive inside the disc, zero outside; grows with penetration depth.

    Uses squared distances so the expression stays polynomial.
    """
    d = np.asarray(p, dtype=float)[:2] - circle.center
    return float(positive_part(circle.radius**2 - d @ d))


def rect_from_segment(seg: LineSegment, margin: float) -> RectObstacle:
    """Inflate a detected wall segment into a keep-out rectangle.

    The rectangle extends ``margin`` on both sides of the segment and
    ``margin`` beyond each endpoint, so a zero-margin segment yields a
    degenerate rectangle with empty interior.
    """
    if margin < 0.0:
        raise ValueError(f"margin must be nonnegative, got {margin}")
    if seg.length < 1e-6:
        raise ValueError("segment too short to orient a rectangle")
    t = seg.direction
    n = np.array([-t[1], t[0]])
    normals = np.array([-n, n, t, -t])
    offsets = np.array(
        [
            n @ seg.p1 + margin,
            -(n @ seg.p1) + margin,
            -(t @ seg.p1) + margin,
            t @ seg.p2 + margin,
        ]
    )
    return RectObstacle(normals=normals, offsets=offsets)


def rect_residual(p: NDArray[np.floating], rect: RectObstacle) -> float:
    """Product of the four half-plane residuals; zero anywhere outside."""
    p = np.asarray(p, dtype=float)[:2]
    vals = positive_part(rect.normals @ p + rect.offsets)
    return float(vals[0] * vals[1] * vals[2] * vals[3])


def rate_residuals(
    u_seq: NDArray[np.floating],
    u_prev: NDArray[np.floating],
    bounds: RateBounds,
) -> NDArray[np.float64]:
    """Two-sided attitude-rate residuals for every consecutive input pair.

    Ordering: for each step j (with pair u[j-1] -> u[j], where the pair
    for j = 0 is u_prev -> u[0]): roll up, roll down, pitch up, pitch
    down.  All entries are zero exactly when every attitude command
    moves by at most its per-step bound.
    """
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
    n = u_seq.shape[0]
    out = np.zeros(4 * n)
    prev = np.asarray(u_prev, dtype=float)
    for j in range(n):
        dphi = u_seq[j, 1] - prev[1]
        dtheta = u_seq[j, 2] - prev[2]
        out[4 * j + 0] = max(0.0, dphi - bounds.dphi_max)
        out[4 * j + 1] = max(0.0, -dphi - bounds.dphi_max)
        out[4 * j + 2] = max(0.0, dtheta - bounds.dtheta_max)
        out[4 * j + 3] = max(0.0, -dtheta - bounds.dtheta_max)
        prev = u_seq[j]
    return out


def far_circle() -> CircleObstacle:
    """Filler for an unused circle slot; zero residual anywhere real."""
    return CircleObstacle(center=(FAR_AWAY, FAR_AWAY), radius=1.0)


def far_rect() -> RectObstacle:
    """Filler for an unused rectangle slot: a far-away unit square."""
    normals = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    offsets = np.array(
        [
            -(FAR_AWAY - 0.5),
            FAR_AWAY + 0.5,
            -(FAR_AWAY - 0.5),
            FAR_AWAY + 0.5,
        ]
    )
    return RectObstacle(normals=normals, offsets=offsets)


def assemble_residuals(
    u_seq: NDArray[np.floating],
    x0: NDArray[np.floating],
    u_prev: NDArray[np.floating],
    circles: list[CircleObstacle],
    rects: list[RectObstacle],
    rate_bounds: RateBounds,
    model: ModelParams,
    circle_slots: int = CIRCLE_SLOTS,
    rect_slots: int = RECT_SLOTS,
) -> NDArray[np.float64]:
    """Full constraint residual vector G for one optimization instance.

    Evaluates every obstacle slot at every predicted state of the Euler
    rollout, then appends the input-rate residuals.  Unused slots are
    padded with far-away fillers so the vector length is fixed by the
    slot capacities: (circle_slots + rect_slots) * (N+1) + 4 * N.

    This is the plain readable reference; the optimizer uses a compiled
    equivalent that is tested against this function.
    """
    if len(circles) > circle_slots:
        raise ValueError(
            f"{len(circles)} circles exceed the {circle_slots} available slots"
        )
    if len(rects) > rect_slots:
        raise ValueError(f"{len(rects)} rectangles exceed the {rect_slots} available slots")

    states = rollout(x0, u_seq, model)
    pos = states[:, 0:2]
    n_states = pos.shape[0]

    padded_circles = list(circles) + [far_circle()] * (circle_slots - len(circles))
    padded_rects = list(rects) + [far_rect()] * (rect_slots - len(rects))

    parts = []
    for circle in padded_circles:
        parts.append(np.array([circle_residual(p, circle) for p in pos]))
    for rect in padded_rects:
        parts.append(np.array([rect_residual(p, rect) for p in pos]))
    parts.append(rate_residuals(u_seq, u_prev, rate_bounds))

    g = np.concatenate(parts)
    expected = (circle_slots + rect_slots) * n_states + 4 * (n_states - 1)
    assert g.shape == (expected,)
    return g
