"""Small planar geometry helpers shared by perception and constraints."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray


@dataclass
class LineSegment:
    """Segment between two planar endpoints."""

    p1: NDArray[np.float64]
    p2: NDArray[np.float64]

    def __post_init__(self) -> None:
        self.p1 = np.asarray(self.p1, dtype=float).reshape(2)
        self.p2 = np.asarray(self.p2, dtype=float).reshape(2)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p2 - self.p1))

    @property
    def direction(self) -> NDArray[np.float64]:
        """Unit tangent from p1 to p2."""
        d = self.p2 - self.p1
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise ValueError("segment endpoints coincide, no direction")
        return d / n


def point_segment_distance(p: NDArray[np.floating], seg: LineSegment) -> float:
    """Euclidean distance from a point to the closest point of a segment."""
    p = np.asarray(p, dtype=float)[:2]
    d = seg.p2 - seg.p1
    denom = float(d @ d)
    if denom < 1e-24:
        return float(np.linalg.norm(p - seg.p1))
    t = np.clip(float((p - seg.p1) @ d) / denom, 0.0, 1.0)
    return float(np.linalg.norm(p - (seg.p1 + t * d)))


def rotation(angle: float) -> NDArray[np.float64]:
    """2x2 counterclockwise rotation matrix."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])
