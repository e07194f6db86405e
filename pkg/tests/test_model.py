"""Tests for the reduced quadrotor model."""

import numpy as np
import pytest

from uavnav.model import (
    GRAVITY,
    INPUT_DIM,
    STATE_DIM,
    ModelParams,
    continuous_dynamics,
    hover_input,
    hover_state,
    linearize,
    predict_step,
    rollout,
    simulate_plant,
    thrust_to_command,
)

PARAMS = ModelParams()


def test_hover_derivative_is_zero():
    x = hover_state((0.0, 0.0, 0.0))
    xdot = continuous_dynamics(x, hover_input(PARAMS), PARAMS)
    np.testing.assert_array_equal(xdot, np.zeros(STATE_DIM))


def test_damping_only_deceleration():
    x = hover_state((0.0, 0.0, 0.0))
    x[3] = 1.0
    xdot = continuous_dynamics(x, hover_input(PARAMS), PARAMS)
    expected = np.zeros(STATE_DIM)
    expected[0] = 1.0          # position rate = velocity
    expected[3] = -PARAMS.drag[0] * 1.0
    np.testing.assert_allclose(xdot, expected, rtol=0, atol=1e-15)


def test_roll_first_order_law():
    x = hover_state((0.0, 0.0, 0.0))
    u = np.array([PARAMS.g, 0.2, 0.0])
    xdot = continuous_dynamics(x, u, PARAMS)
    assert xdot[6] == pytest.approx(0.2 / 0.23, rel=1e-12)
    assert xdot[7] == 0.0


def test_attitude_channels_decouple():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.normal(size=STATE_DIM)
        u = np.array([9.0, rng.normal(), rng.normal()])
        base = continuous_dynamics(x, u, PARAMS)
        u2 = u.copy()
        u2[1] += 0.1
        bumped = continuous_dynamics(x, u2, PARAMS)
        # roll command must never reach the pitch rate, and vice versa
        assert bumped[7] == base[7]
        u3 = u.copy()
        u3[2] += 0.1
        bumped = continuous_dynamics(x, u3, PARAMS)
        assert bumped[6] == base[6]


def test_predict_step_is_euler_by_definition():
    rng = np.random.default_rng(11)
    for _ in range(10):
        x = rng.normal(size=STATE_DIM)
        u = rng.normal(size=INPUT_DIM) + np.array([9.81, 0.0, 0.0])
        np.testing.assert_array_equal(
            predict_step(x, u, PARAMS),
            x + PARAMS.ts * continuous_dynamics(x, u, PARAMS),
        )


def test_predict_step_hover_fixed_point():
    x = hover_state((1.0, -2.0, 0.7))
    np.testing.assert_array_equal(predict_step(x, hover_input(PARAMS), PARAMS), x)


def test_predict_step_single_euler_roll():
    x = hover_state((0.0, 0.0, 0.0))
    u = np.array([PARAMS.g, 0.2, 0.0])
    nxt = predict_step(x, u, PARAMS)
    assert nxt[6] == pytest.approx(0.05 * 0.2 / 0.23, rel=1e-12)
    # position, velocity and pitch must be untouched by a pure roll command
    np.testing.assert_allclose(np.delete(nxt, 6), np.zeros(7), atol=1e-15)


def test_linearize_matches_finite_differences():
    rng = np.random.default_rng(7)
    x = rng.normal(size=STATE_DIM) * 0.5
    u = np.array([10.0, 0.05, -0.1])
    jx, ju = linearize(x, u, PARAMS)
    eps = 1e-7
    for i in range(STATE_DIM):
        dx = np.zeros(STATE_DIM)
        dx[i] = eps
        fd = (
            continuous_dynamics(x + dx, u, PARAMS)
            - continuous_dynamics(x - dx, u, PARAMS)
        ) / (2 * eps)
        np.testing.assert_allclose(jx[:, i], fd, atol=1e-6)
    for i in range(INPUT_DIM):
        du = np.zeros(INPUT_DIM)
        du[i] = eps
        fd = (
            continuous_dynamics(x, u + du, PARAMS)
            - continuous_dynamics(x, u - du, PARAMS)
        ) / (2 * eps)
        np.testing.assert_allclose(ju[:, i], fd, atol=1e-6)


class TestRollout:
    def test_hover_produces_identical_states(self):
        x0 = hover_state((0.0, 0.0, 1.0))
        u_seq = np.tile(hover_input(PARAMS), (40, 1))
        states = rollout(x0, u_seq, PARAMS)
        assert states.shape == (41, STATE_DIM)
        np.testing.assert_array_equal(states, np.tile(x0, (41, 1)))

    def test_single_step(self):
        x0 = hover_state((0.0, 0.0, 0.0))
        u = np.array([[10.0, 0.1, -0.05]])
        states = rollout(x0, u, PARAMS)
        assert states.shape == (2, STATE_DIM)
        np.testing.assert_array_equal(states[1], predict_step(x0, u[0], PARAMS))

    def test_matches_hand_iteration(self):
        # independent oracle: step the dynamics with plain python floats
        rng = np.random.default_rng(42)
        x0 = rng.normal(size=STATE_DIM) * 0.3
        u_seq = rng.normal(size=(5, INPUT_DIM)) * 0.1 + np.array([9.81, 0.0, 0.0])
        p = PARAMS

        def step(s, u):
            import math

            phi, theta = s[6], s[7]
            out = [
                s[0] + p.ts * s[3],
                s[1] + p.ts * s[4],
                s[2] + p.ts * s[5],
                s[3] + p.ts * (u[0] * math.cos(phi) * math.sin(theta) - p.drag[0] * s[3]),
                s[4] + p.ts * (-u[0] * math.sin(phi) - p.drag[1] * s[4]),
                s[5]
                + p.ts * (u[0] * math.cos(phi) * math.cos(theta) - p.g - p.drag[2] * s[5]),
                s[6] + p.ts * (p.k_phi * u[1] - phi) / p.tau_phi,
                s[7] + p.ts * (p.k_theta * u[2] - theta) / p.tau_theta,
            ]
            return out

        expect = [list(x0)]
        for j in range(5):
            expect.append(step(expect[-1], u_seq[j]))
        states = rollout(x0, u_seq, PARAMS)
        np.testing.assert_allclose(states, np.array(expect), rtol=1e-13)

    def test_rejects_empty_sequence(self):
        with pytest.raises(ValueError):
            rollout(np.zeros(STATE_DIM), np.zeros((0, INPUT_DIM)), PARAMS)


class TestPlant:
    def test_hover_unchanged(self):
        x = hover_state((0.5, 0.5, 2.0))
        np.testing.assert_allclose(
            simulate_plant(x, hover_input(PARAMS), PARAMS), x, atol=1e-14
        )

    def test_small_step_consistency(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=STATE_DIM) * 0.2
        u = np.array([9.5, 0.1, 0.05])
        f = continuous_dynamics(x, u, PARAMS)
        errs = []
        for dt in (2e-4, 1e-4):
            rate = (simulate_plant(x, u, PARAMS, dt=dt) - x) / dt
            errs.append(np.linalg.norm(rate - f))
        # difference quotient approaches the vector field at first order
        assert errs[1] < errs[0]
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)

    def test_roll_step_response_time_constant(self):
        # analytic first-order response: phi(t) = phi_ref * (1 - exp(-t/tau))
        x = hover_state((0.0, 0.0, 0.0))
        u = np.array([PARAMS.g, 0.1, 0.0])
        dt = 0.001
        t = 0.0
        while t < 0.6:
            x = simulate_plant(x, u, PARAMS, dt=dt)
            t += dt
        expected = 0.1 * (1.0 - np.exp(-t / PARAMS.tau_phi))
        assert x[6] == pytest.approx(expected, abs=1e-6)

    def test_euler_vs_rk4_gap_shrinks_quadratically(self):
        x = hover_state((0.0, 0.0, 0.0))
        u = np.array([10.5, 0.15, -0.1])
        gaps = []
        for ts in (0.05, 0.025):
            p = ModelParams(ts=ts)
            gap = np.linalg.norm(predict_step(x, u, p) - simulate_plant(x, u, p))
            gaps.append(gap)
        # per-step local error of Euler is O(ts^2): halving ts gives ~4x
        assert gaps[0] / gaps[1] == pytest.approx(4.0, rel=0.2)

    def test_rejects_oversized_step(self):
        with pytest.raises(ValueError):
            simulate_plant(np.zeros(STATE_DIM), hover_input(PARAMS), PARAMS, dt=0.06)


class TestThrustCommand:
    def test_zero_request(self):
        assert thrust_to_command(0.0, PARAMS.thrust_coeff) == 0.0

    def test_full_scale(self):
        assert thrust_to_command(PARAMS.thrust_coeff, PARAMS.thrust_coeff) == 1.0

    def test_quadratic_inverse(self):
        c = PARAMS.thrust_coeff
        assert thrust_to_command(0.25 * c, c) == pytest.approx(0.5, rel=1e-12)

    def test_gravity_request_saturates(self):
        # sqrt(g / (sqrt(g)/0.48)) = sqrt(0.48 * sqrt(g)) ~ 1.226 > 1, so the
        # command clamps at full throttle with the stock coefficient
        c = PARAMS.thrust_coeff
        unclamped = np.sqrt(GRAVITY / c)
        assert unclamped == pytest.approx(1.22617, abs=1e-4)
        assert thrust_to_command(GRAVITY, c) == 1.0

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            thrust_to_command(1.0, 0.0)
        with pytest.raises(ValueError):
            thrust_to_command(-0.1, 1.0)


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(ts=0.0)
    with pytest.raises(ValueError):
        ModelParams(tau_phi=-1.0)
