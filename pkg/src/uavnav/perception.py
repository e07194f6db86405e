"""Simulated planar LiDAR and the scan-to-obstacle detector.

The sensor model casts evenly spaced rays against scene ground truth
(circles, wall segments, the arena boundary) and optionally perturbs the
returned ranges with clipped Gaussian noise.  The detector runs the
classic pipeline: polar points, adaptive-gap clustering, then a per
cluster fit that picks between a total-least-squares line and an
algebraic circle.  Detected circles come back inflated by the safety
distance so the planner can treat them directly as keep-out disks.

Everything here is stateless; consecutive scans are independent and any
temporal smoothing is left to the receding-horizon loop that consumes
the detections.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .constraints import CircleObstacle
from .geom import LineSegment, rotation

#: range noise is clipped at this many sigmas, which keeps the simulated
#: ranges within a provable band around the true geometry
NOISE_CLIP_SIGMAS = 4.0

_MIN_RANGE = 1e-6


@dataclass(frozen=True)
class LidarSpec:
    """Beam layout and noise model of the simulated scanner."""

    n_beams: int = 720
    fov: float = 2.0 * np.pi
    max_range: float = 25.0
    noise_sigma: float = 0.01
    rate: float = 20.0

    def __post_init__(self) -> None:
        if self.n_beams < 8:
            raise ValueError(f"need at least 8 beams, got {self.n_beams}")
        if self.max_range <= 0.0 or self.fov <= 0.0:
            raise ValueError("field of view and max range must be positive")
        if self.noise_sigma < 0.0 or self.rate <= 0.0:
            raise ValueError("noise sigma must be nonnegative and rate positive")


def beam_bearings(spec: LidarSpec) -> NDArray[np.float64]:
    """Body-frame beam angles, evenly spaced from -fov/2 (endpoint open).

    The open endpoint avoids a duplicated beam on full-circle scans; for
    an even beam count the forward direction (bearing zero) is always
    included.
    """
    k = np.arange(spec.n_beams, dtype=float)
    return -0.5 * spec.fov + spec.fov * k / spec.n_beams


@dataclass
class Scan:
    """One sweep: sensor pose, per-beam bearings and measured ranges.

    ``ranges`` equal to ``max_range`` mean no return on that beam.
    """

    pose: NDArray[np.float64]
    bearings: NDArray[np.float64]
    ranges: NDArray[np.float64]
    max_range: float

    def __post_init__(self) -> None:
        self.pose = np.asarray(self.pose, dtype=float).reshape(3)
        self.bearings = np.asarray(self.bearings, dtype=float).ravel()
        self.ranges = np.asarray(self.ranges, dtype=float).ravel()
        if self.bearings.shape != self.ranges.shape:
            raise ValueError("bearings and ranges must have matching length")
        if np.any(self.ranges <= 0.0) or np.any(self.ranges > self.max_range):
            raise ValueError("ranges must lie in (0, max_range]")


@dataclass(frozen=True)
class Scene:
    """Ground-truth geometry the sensor sees.

    Circles carry their true radii here; inflation happens on the
    detection side.  ``bounds`` is the arena rectangle (xmin, ymin,
    xmax, ymax) or None for an unbounded world.
    """

    circles: tuple[CircleObstacle, ...] = ()
    segments: tuple[LineSegment, ...] = ()
    bounds: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "circles", tuple(self.circles))
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.bounds is None:
            return
        xmin, ymin, xmax, ymax = self.bounds
        if xmin >= xmax or ymin >= ymax:
            raise ValueError("arena bounds must span a nonempty rectangle")

        def inside(x: float, y: float) -> bool:
            return xmin <= x <= xmax and ymin <= y <= ymax

        for c in self.circles:
            if not (
                inside(c.center[0] - c.radius, c.center[1] - c.radius)
                and inside(c.center[0] + c.radius, c.center[1] + c.radius)
            ):
                raise ValueError(f"circle at {tuple(c.center)} leaves the arena")
        for s in self.segments:
            if not (inside(*s.p1) and inside(*s.p2)):
                raise ValueError("wall segment leaves the arena")

    def boundary_segments(self) -> list[LineSegment]:
        """The four arena walls as segments (empty when unbounded)."""
        if self.bounds is None:
            return []
        xmin, ymin, xmax, ymax = self.bounds
        corners = [(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)]
        return [LineSegment(corners[i], corners[(i + 1) % 4]) for i in range(4)]


@dataclass
class Detections:
    """World-frame obstacles extracted from one scan."""

    circles: list[CircleObstacle] = field(default_factory=list)
    segments: list[LineSegment] = field(default_factory=list)


def _ray_circle(ox, oy, dx, dy, circle) -> NDArray[np.float64]:
    """Smallest positive ray parameter per beam, inf where no hit."""
    cx, cy = circle.center
    fx, fy = ox - cx, oy - cy
    b = dx * fx + dy * fy
    c0 = fx * fx + fy * fy - circle.radius**2
    disc = b * b - c0
    root = np.sqrt(np.maximum(disc, 0.0))
    t_near = -b - root
    t_far = -b + root
    t = np.where(t_near > _MIN_RANGE, t_near, t_far)
    return np.where((disc >= 0.0) & (t > _MIN_RANGE), t, np.inf)


def _ray_segment(ox, oy, dx, dy, seg: LineSegment) -> NDArray[np.float64]:
    """Positive ray parameter per beam against one segment, inf if none."""
    ex, ey = seg.p2[0] - seg.p1[0], seg.p2[1] - seg.p1[1]
    qx, qy = seg.p1[0] - ox, seg.p1[1] - oy
    denom = dx * ey - dy * ex
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qx * ey - qy * ex) / denom
        s = (qx * dy - qy * dx) / denom
    ok = (np.abs(denom) > 1e-12) & (t > _MIN_RANGE) & (s >= 0.0) & (s <= 1.0)
    return np.where(ok, t, np.inf)


def raycast(
    scene: Scene,
    pose: NDArray[np.floating],
    spec: LidarSpec,
    rng: np.random.Generator | None = None,
) -> Scan:
    """Scan the scene from a pose (x, y, yaw).

    Each beam reports the nearest intersection with any circle, wall
    segment or arena boundary, capped at ``max_range``.  With a
    generator supplied, ranges of actual returns get Gaussian noise
    clipped to +-NOISE_CLIP_SIGMAS * sigma and clamped positive; beams
    without a return stay exactly at ``max_range``.
    """
    pose = np.asarray(pose, dtype=float).reshape(3)
    ox, oy, yaw = pose
    if scene.bounds is not None:
        xmin, ymin, xmax, ymax = scene.bounds
        if not (xmin <= ox <= xmax and ymin <= oy <= ymax):
            raise ValueError(f"sensor pose ({ox}, {oy}) outside the arena")

    bearings = beam_bearings(spec)
    angles = yaw + bearings
    dx, dy = np.cos(angles), np.sin(angles)

    t = np.full(spec.n_beams, np.inf)
    for circle in scene.circles:
        t = np.minimum(t, _ray_circle(ox, oy, dx, dy, circle))
    for seg in list(scene.segments) + scene.boundary_segments():
        t = np.minimum(t, _ray_segment(ox, oy, dx, dy, seg))

    hit = t < spec.max_range
    ranges = np.where(hit, t, spec.max_range)
    if rng is not None and spec.noise_sigma > 0.0:
        clip = NOISE_CLIP_SIGMAS * spec.noise_sigma
        noise = np.clip(rng.normal(0.0, spec.noise_sigma, spec.n_beams), -clip, clip)
        noisy = np.clip(ranges + noise, _MIN_RANGE, spec.max_range)
        ranges = np.where(hit, noisy, ranges)
    return Scan(pose=pose, bearings=bearings, ranges=ranges, max_range=spec.max_range)


def to_pointcloud(scan: Scan) -> NDArray[np.float64]:
    """Body-frame (x, y) points of actual returns, ordered by bearing."""
    keep = scan.ranges < scan.max_range - 1e-9
    r = scan.ranges[keep]
    a = scan.bearings[keep]
    return np.column_stack([r * np.cos(a), r * np.sin(a)])


def segment_cloud(
    points: NDArray[np.floating], min_points: int = 4
) -> list[NDArray[np.float64]]:
    """Split a bearing-ordered cloud into clusters at large gaps.

    The split threshold between neighbours is 0.1 m plus 5 percent of
    the nearer point's range, so distant sparse returns still group.
    On full-circle scans an object behind the sensor straddles the
    bearing seam; when the last and first points are within threshold
    the two end clusters are merged.  Clusters with fewer than
    ``min_points`` points are dropped as noise.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if points.shape[0] == 0:
        return []
    radii = np.linalg.norm(points, axis=1)
    gaps = np.linalg.norm(np.diff(points, axis=0), axis=1)
    limit = 0.1 + 0.05 * np.minimum(radii[:-1], radii[1:])
    cuts = np.nonzero(gaps > limit)[0] + 1
    clusters = np.split(points, cuts)

    if len(clusters) > 1:
        seam_gap = float(np.linalg.norm(points[0] - points[-1]))
        seam_limit = 0.1 + 0.05 * min(radii[0], radii[-1])
        if seam_gap <= seam_limit:
            clusters[0] = np.vstack([clusters[-1], clusters[0]])
            clusters.pop()
    return [c for c in clusters if c.shape[0] >= min_points]


def _fit_line(points: NDArray[np.float64]) -> tuple[LineSegment, float]:
    """Total-least-squares line through the cluster, clipped to extent."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    direction, normal = vt[0], vt[1]
    rms = float(np.sqrt(np.mean((centered @ normal) ** 2)))
    along = centered @ direction
    p1 = centroid + along.min() * direction
    p2 = centroid + along.max() * direction
    return LineSegment(tuple(p1), tuple(p2)), rms


def _fit_circle(points: NDArray[np.float64]) -> tuple[NDArray[np.float64], float, float]:
    """Algebraic least-squares circle: center, radius and radial RMS.

    Solves the linear system in (center, radius^2 - |center|^2) that
    the circle equation induces; degenerate (collinear) clusters come
    back with a non-finite or absurd radius and are rejected upstream.
    """
    a = np.column_stack([2.0 * points, np.ones(points.shape[0])])
    b = np.einsum("ij,ij->i", points, points)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    center = sol[0:2]
    r_sq = sol[2] + float(center @ center)
    if r_sq <= 0.0 or not np.isfinite(r_sq):
        return center, np.nan, np.inf
    radius = float(np.sqrt(r_sq))
    rms = float(np.sqrt(np.mean((np.linalg.norm(points - center, axis=1) - radius) ** 2)))
    return center, radius, rms


#: prefer the line fit while its RMS is within this factor of the circle
#: RMS; shallow arcs of large obstacles are better treated as walls
LINE_PREFERENCE = 1.2


def fit_cluster(
    cluster: NDArray[np.floating], safety_margin: float
) -> CircleObstacle | LineSegment:
    """Classify one cluster as an inflated circle or a wall segment.

    Fits both models and keeps the line when its RMS residual is within
    ``LINE_PREFERENCE`` times the circle's.  A returned circle's radius
    is the fitted radius plus ``safety_margin``, exactly.
    """
    cluster = np.asarray(cluster, dtype=float).reshape(-1, 2)
    if cluster.shape[0] < 2 or np.ptp(cluster, axis=0).max() < 1e-12:
        raise ValueError("cluster has no spatial extent to fit")
    line, line_rms = _fit_line(cluster)
    center, radius, circle_rms = _fit_circle(cluster)
    if not np.isfinite(circle_rms) or line_rms <= LINE_PREFERENCE * circle_rms:
        return line
    return CircleObstacle(center=tuple(center), radius=radius + safety_margin)


def detect(scan: Scan, safety_margin: float) -> Detections:
    """Full pipeline: cloud, clusters, fits, world-frame outputs."""
    points = to_pointcloud(scan)
    rot = rotation(scan.pose[2])
    origin = scan.pose[0:2]
    out = Detections()
    for cluster in segment_cloud(points):
        fitted = fit_cluster(cluster, safety_margin)
        if isinstance(fitted, CircleObstacle):
            center = origin + rot @ np.asarray(fitted.center)
            out.circles.append(CircleObstacle(tuple(center), fitted.radius))
        else:
            p1 = origin + rot @ np.asarray(fitted.p1)
            p2 = origin + rot @ np.asarray(fitted.p2)
            out.segments.append(LineSegment(tuple(p1), tuple(p2)))
    return out
