"""Artificial-potential-field avoidance layers used as baselines.

Both variants turn the body-frame LiDAR point cloud into a repulsive
force and add it to an attractive pull toward the reference position;
the resulting vector shifts the set-point handed to a plain tracking
controller.  The baseline uses a linear falloff plus a static per-point
offset inside the influence radius.  The enhanced variant replaces the
offset with a quadratic falloff and adds a large safety-critical gain
for points closer than ``r_s``, then passes the force through magnitude
and rate caps with a final normalization, so the commanded shift never
exceeds unit length and never jumps between steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray


@dataclass(frozen=True)
class ApfConfig:
    """Gains and radii of the potential fields."""

    l_a: float = 1.0
    l_r: tuple[float, float] = (0.08, 0.16)
    l_offset: float = 0.04
    l_s: float = 1.5
    r_f: float = 0.75
    r_s: float = 0.4
    f_max: float = 6.0
    df_max: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.r_s < self.r_f:
            raise ValueError("safety radius must satisfy 0 < r_s < r_f")
        gains = (self.l_a, *self.l_r, self.l_offset, self.l_s, self.f_max, self.df_max)
        if min(gains) < 0.0:
            raise ValueError("gains and caps must be nonnegative")


@dataclass
class ForceState:
    """Previous repulsive force, carried across steps for rate limiting."""

    f_r_prev: NDArray[np.float64] = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self) -> None:
        self.f_r_prev = np.asarray(self.f_r_prev, dtype=float).reshape(2)
        if not np.all(np.isfinite(self.f_r_prev)):
            raise ValueError("previous force must be finite")


def _away_directions(
    points: NDArray[np.floating], radius: float
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Unit vectors pointing from points to the sensor, within radius.

    Points at the origin have no direction and are skipped.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    norms = np.linalg.norm(points, axis=1)
    keep = (norms > 1e-12) & (norms <= radius)
    n = norms[keep][:, None]
    return -points[keep] / n, n


def repulsive_baseline(
    points: NDArray[np.floating], cfg: ApfConfig
) -> NDArray[np.float64]:
    """Linear-falloff repulsion plus a static offset per point in range."""
    away, n = _away_directions(points, cfg.r_f)
    if away.shape[0] == 0:
        return np.zeros(2)
    gains = np.asarray(cfg.l_r)
    return np.sum((gains * (1.0 - n / cfg.r_f) + cfg.l_offset) * away, axis=0)


def repulsive_enhanced(
    points: NDArray[np.floating], cfg: ApfConfig
) -> NDArray[np.float64]:
    """Quadratic-falloff repulsion with a safety-critical near-field term."""
    away, n = _away_directions(points, cfg.r_f)
    if away.shape[0] == 0:
        return np.zeros(2)
    gains = np.asarray(cfg.l_r)
    force = np.sum(gains * (1.0 - n / cfg.r_f) ** 2 * away, axis=0)
    near = (n <= cfg.r_s).ravel()
    force += cfg.l_s * np.sum(away[near], axis=0)
    return force


def _cap_norm(v: NDArray[np.float64], limit: float) -> NDArray[np.float64]:
    """Rescale to the limit magnitude when the vector exceeds it."""
    m = float(np.linalg.norm(v))
    if m > limit:
        return v * (limit / m)
    return v


def force_step(
    f_a: NDArray[np.floating],
    f_r: NDArray[np.floating],
    state: ForceState,
    cfg: ApfConfig,
) -> NDArray[np.float64]:
    """One safety-critical force update.

    The repulsive force is magnitude-capped, then rate-capped against
    the previous step's value (which the state keeps); the attraction is
    normalized to at most unit length, and so is the sum, keeping the
    commanded set-point shift bounded.
    """
    f_r = _cap_norm(np.asarray(f_r, dtype=float).reshape(2), cfg.f_max)
    delta = f_r - state.f_r_prev
    step = float(np.linalg.norm(delta))
    if step > cfg.df_max:
        f_r = state.f_r_prev + delta * (cfg.df_max / step)
    state.f_r_prev = f_r.copy()
    f_a = _cap_norm(np.asarray(f_a, dtype=float).reshape(2), 1.0)
    return _cap_norm(f_a + f_r, 1.0)


def apf_setpoint(
    p_ref: NDArray[np.floating],
    p_hat: NDArray[np.floating],
    points: NDArray[np.floating],
    mode: str,
    state: ForceState,
    cfg: ApfConfig,
) -> NDArray[np.float64]:
    """Shifted planar set-point for the tracking controller.

    ``points`` is the body-frame cloud around the vehicle at ``p_hat``
    (the vehicle flies at zero yaw, so body axes align with the world).
    Baseline mode adds raw attraction and repulsion; enhanced mode runs
    the capped force update and therefore never shifts the set-point by
    more than one meter per evaluation.
    """
    p_ref = np.asarray(p_ref, dtype=float).reshape(-1)[0:2]
    p_hat = np.asarray(p_hat, dtype=float).reshape(-1)[0:2]
    f_a = cfg.l_a * (p_ref - p_hat)
    if mode == "baseline":
        force = f_a + repulsive_baseline(points, cfg)
    elif mode == "enhanced":
        force = force_step(f_a, repulsive_enhanced(points, cfg), state, cfg)
    else:
        raise ValueError(f"unknown potential-field mode: {mode!r}")
    return p_hat + force
