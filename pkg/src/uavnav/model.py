"""Reduced quadrotor model used for prediction and plant simulation.

The attitude and thrust loops of the flight controller are abstracted
into first-order lag responses, so the model state is only

    index  symbol  meaning
    -----  ------  -------------------------------
    0:3    p       position [m], world frame
    3:6    v       velocity [m/s], world frame
    6      phi     roll angle [rad]
    7      theta   pitch angle [rad]

and the input is

    0      T          mass-normalized thrust [m/s^2]
    1      phi_ref    roll command [rad]
    2      theta_ref  pitch command [rad]

Yaw is regulated to zero by a separate loop and never enters the model,
which keeps body and world axes aligned for the planar sensor.  The
same equations serve two purposes: a cheap forward-Euler step used
inside the optimizer, and a higher-order RK4 step used as the simulated
plant so that the controller always works against model mismatch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

GRAVITY = 9.81

STATE_DIM = 8
INPUT_DIM = 3


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the lag-abstracted quadrotor.

    drag is the diagonal of the linear drag matrix acting on velocity.
    thrust_coeff maps the normalized autopilot throttle to thrust via
    T = thrust_coeff * throttle**2.
    """

    g: float = GRAVITY
    tau_phi: float = 0.23
    tau_theta: float = 0.25
    k_phi: float = 1.0
    k_theta: float = 1.0
    drag: tuple[float, float, float] = (0.1, 0.1, 0.2)
    thrust_coeff: float = math.sqrt(GRAVITY) / 0.48
    ts: float = 0.05

    def __post_init__(self) -> None:
        if self.ts <= 0.0:
            raise ValueError(f"sampling time must be positive, got {self.ts}")
        if self.tau_phi <= 0.0 or self.tau_theta <= 0.0:
            raise ValueError("attitude time constants must be positive")
        if self.thrust_coeff <= 0.0:
            raise ValueError("thrust coefficient must be positive")


def hover_state(position: NDArray[np.floating]) -> NDArray[np.float64]:
    """State resting at ``position`` with zero velocity and level attitude."""
    x = np.zeros(STATE_DIM)
    x[0:3] = position
    return x


def hover_input(params: ModelParams) -> NDArray[np.float64]:
    """Steady-state input (thrust cancels gravity, level attitude)."""
    return np.array([params.g, 0.0, 0.0])


def continuous_dynamics(
    x: NDArray[np.floating], u: NDArray[np.floating], params: ModelParams
) -> NDArray[np.float64]:
    """Time derivative of the state.

    Thrust acts along the body z axis tilted by roll and pitch, gravity
    and linear drag act in the world frame, and both angles track their
    commands through first-order lags.
    """
    phi, theta = x[6], x[7]
    thrust, phi_ref, theta_ref = u[0], u[1], u[2]
    cphi, sphi = math.cos(phi), math.sin(phi)
    ctheta, stheta = math.cos(theta), math.sin(theta)

    xdot = np.empty(STATE_DIM)
    xdot[0:3] = x[3:6]
    xdot[3] = thrust * cphi * stheta - params.drag[0] * x[3]
    xdot[4] = -thrust * sphi - params.drag[1] * x[4]
    xdot[5] = thrust * cphi * ctheta - params.g - params.drag[2] * x[5]
    xdot[6] = (params.k_phi * phi_ref - phi) / params.tau_phi
    xdot[7] = (params.k_theta * theta_ref - theta) / params.tau_theta
    return xdot


def linearize(
    x: NDArray[np.floating], u: NDArray[np.floating], params: ModelParams
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Continuous-time Jacobians (d xdot / d x, d xdot / d u)."""
    phi, theta = x[6], x[7]
    thrust = u[0]
    cphi, sphi = math.cos(phi), math.sin(phi)
    ctheta, stheta = math.cos(theta), math.sin(theta)

    jx = np.zeros((STATE_DIM, STATE_DIM))
    jx[0, 3] = jx[1, 4] = jx[2, 5] = 1.0
    jx[3, 3] = -params.drag[0]
    jx[4, 4] = -params.drag[1]
    jx[5, 5] = -params.drag[2]
    jx[3, 6] = -thrust * sphi * stheta
    jx[3, 7] = thrust * cphi * ctheta
    jx[4, 6] = -thrust * cphi
    jx[5, 6] = -thrust * sphi * ctheta
    jx[5, 7] = -thrust * cphi * stheta
    jx[6, 6] = -1.0 / params.tau_phi
    jx[7, 7] = -1.0 / params.tau_theta

    ju = np.zeros((STATE_DIM, INPUT_DIM))
    ju[3, 0] = cphi * stheta
    ju[4, 0] = -sphi
    ju[5, 0] = cphi * ctheta
    ju[6, 1] = params.k_phi / params.tau_phi
    ju[7, 2] = params.k_theta / params.tau_theta
    return jx, ju


def predict_step(
    x: NDArray[np.floating], u: NDArray[np.floating], params: ModelParams
) -> NDArray[np.float64]:
    """One forward-Euler step of length ``params.ts`` (optimizer model)."""
    return np.asarray(x, dtype=float) + params.ts * continuous_dynamics(x, u, params)


def rollout(
    x0: NDArray[np.floating], u_seq: NDArray[np.floating], params: ModelParams
) -> NDArray[np.float64]:
    """Euler-predict the state trajectory under an input sequence.

    Parameters
    ----------
    x0 : (8,) initial state.
    u_seq : (N, 3) input sequence, one row per step.

    Returns
    -------
    (N+1, 8) array of states, row 0 being ``x0`` itself.
    """
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
    n = u_seq.shape[0]
    if n < 1:
        raise ValueError("rollout needs at least one input")
    states = np.empty((n + 1, STATE_DIM))
    states[0] = x0
    for j in range(n):
        states[j + 1] = predict_step(states[j], u_seq[j], params)
    return states


def simulate_plant(
    x: NDArray[np.floating],
    u: NDArray[np.floating],
    params: ModelParams,
    dt: float | None = None,
) -> NDArray[np.float64]:
    """One RK4 step of the same dynamics, used as the simulated plant.

    Deliberately higher order than the optimizer's Euler model so the
    closed loop always runs with prediction error.  ``dt`` defaults to
    the model sampling time and may be shortened for substepping.
    """
    h = params.ts if dt is None else dt
    if h <= 0.0 or h > params.ts + 1e-12:
        raise ValueError(f"plant step must lie in (0, ts], got {h}")
    x = np.asarray(x, dtype=float)
    k1 = continuous_dynamics(x, u, params)
    k2 = continuous_dynamics(x + 0.5 * h * k1, u, params)
    k3 = continuous_dynamics(x + 0.5 * h * k2, u, params)
    k4 = continuous_dynamics(x + h * k3, u, params)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def thrust_to_command(t_ref: float, coeff: float) -> float:
    """Normalized throttle in [0, 1] producing thrust ``t_ref``.

    Inverts T = coeff * cmd**2 and saturates, so thrust requests beyond
    the actuator ceiling map to full throttle.
    """
    if coeff <= 0.0:
        raise ValueError(f"thrust coefficient must be positive, got {coeff}")
    if t_ref < 0.0:
        raise ValueError(f"thrust request must be nonnegative, got {t_ref}")
    return min(1.0, math.sqrt(t_ref / coeff))
