"""Tests for the NMPC cost, parameter packing and the kernel bindings."""

import numpy as np
import pytest

from uavnav import _kernels
from uavnav.constraints import (
    CIRCLE_SLOTS,
    RECT_SLOTS,
    CircleObstacle,
    RateBounds,
    assemble_residuals,
)
from uavnav.geom import LineSegment
from uavnav.model import ModelParams, hover_input, hover_state, rollout
from uavnav.problem import (
    CostWeights,
    HorizonConfig,
    NmpcProblem,
    ParameterVector,
    circle_obstacles,
    pack_parameters,
)

MODEL = ModelParams()
RATES = RateBounds()
U_HOVER = hover_input(MODEL)


def make_problem(steps=5):
    return NmpcProblem(
        model=MODEL,
        weights=CostWeights(),
        horizon=HorizonConfig(steps=steps),
        rate_bounds=RATES,
    )


def make_rho(x_hat, x_ref=None, circles=(), segments=(), margin=0.4):
    x_ref_full = np.zeros(8)
    if x_ref is not None:
        x_ref_full[:len(x_ref)] = x_ref
    return pack_parameters(
        x_hat, x_ref_full, U_HOVER, U_HOVER, list(circles), list(segments), margin
    )


def reference_cost(u_seq, rho, weights):
    """Independent three-term summation of the tracking cost."""
    qx = np.asarray(weights.state)
    qu = np.asarray(weights.input)
    qdu = np.asarray(weights.input_change)
    states = rollout(rho.x_hat, u_seq, MODEL)
    total = 0.0
    for s in states:
        e = s - rho.x_ref
        total += float(e @ (qx * e))
    prev = rho.u_prev
    for u in u_seq:
        e = u - rho.u_ref
        total += float(e @ (qu * e))
        d = u - prev
        total += float(d @ (qdu * d))
        prev = u
    return total


class TestCost:
    def test_zero_at_reference_hover(self):
        prob = make_problem()
        rho = make_rho(hover_state((0, 0, 1)), x_ref=(0, 0, 1))
        z = np.tile(U_HOVER, 5)
        assert prob.cost(z, rho) == 0.0

    def test_one_meter_offset_contribution(self):
        # hovering 1 m off in x keeps the offset at all 6 nodes, each
        # contributing exactly Qx[0] * 1^2 = 2
        prob = make_problem()
        rho = make_rho(hover_state((1, 0, 1)), x_ref=(0, 0, 1))
        z = np.tile(U_HOVER, 5)
        assert prob.cost(z, rho) == pytest.approx(2.0 * 6, rel=1e-12)

    def test_matches_summation_oracle(self):
        rng = np.random.default_rng(2)
        prob = make_problem(steps=3)
        x_hat = rng.normal(size=8) * 0.3
        rho = make_rho(x_hat, x_ref=(0.5, -0.2, 1.0))
        u_seq = rng.normal(size=(3, 3)) * 0.1 + U_HOVER
        got = prob.cost(u_seq.ravel(), rho)
        assert got == pytest.approx(reference_cost(u_seq, rho, prob.weights), rel=1e-12)

    def test_translation_invariance(self):
        rng = np.random.default_rng(3)
        prob = make_problem(steps=4)
        u_seq = rng.normal(size=(4, 3)) * 0.05 + U_HOVER
        x_hat = rng.normal(size=8) * 0.2
        rho_a = make_rho(x_hat, x_ref=(1.0, 0.5, 1.0))
        delta = np.array([3.0, -2.0, 0.7])
        x_hat_b = x_hat.copy()
        x_hat_b[:3] += delta
        rho_b = make_rho(x_hat_b, x_ref=np.array([1.0, 0.5, 1.0]) + delta)
        assert prob.cost(u_seq.ravel(), rho_a) == pytest.approx(
            prob.cost(u_seq.ravel(), rho_b), rel=1e-9
        )


class TestPenalized:
    def test_equals_cost_when_feasible(self):
        prob = make_problem()
        rho = make_rho(hover_state((0, 0, 1)), x_ref=(2, 0, 1))
        z = np.tile(U_HOVER, 5)
        value, _ = prob.penalized(z, rho, q=1000.0)
        assert value == prob.cost(z, rho)

    def test_linear_in_q(self):
        prob = make_problem()
        obs = CircleObstacle(center=(0.0, 0.1), radius=0.6)
        rho = make_rho(hover_state((0, 0, 1)), x_ref=(2, 0, 1), circles=[obs])
        z = np.tile(U_HOVER, 5)
        j = prob.cost(z, rho)
        p1, _ = prob.penalized(z, rho, q=500.0)
        p2, _ = prob.penalized(z, rho, q=1000.0)
        assert p1 > j
        assert p2 - j == pytest.approx(2.0 * (p1 - j), rel=1e-12)

    def test_matches_term_by_term_oracle(self):
        rng = np.random.default_rng(5)
        prob = make_problem(steps=3)
        x_hat = rng.normal(size=8) * 0.2
        obs = CircleObstacle(center=(x_hat[0] + 0.2, x_hat[1]), radius=0.5)
        rho = make_rho(x_hat, x_ref=(1, 0, 1), circles=[obs])
        u_seq = rng.normal(size=(3, 3)) * 0.08 + U_HOVER
        g = assemble_residuals(
            u_seq, rho.x_hat, rho.u_prev, [obs], [], RATES, MODEL
        )
        q = 700.0
        want = reference_cost(u_seq, rho, prob.weights) + q * float(g @ g)
        got, _ = prob.penalized(u_seq.ravel(), rho, q)
        assert got == pytest.approx(want, rel=1e-12)


class TestGradient:
    def test_zero_at_global_minimum(self):
        prob = make_problem()
        rho = make_rho(hover_state((0, 0, 1)), x_ref=(0, 0, 1))
        z = np.tile(U_HOVER, 5)
        np.testing.assert_allclose(prob.gradient(z, rho, 1000.0), np.zeros(15), atol=1e-12)

    def test_matches_central_differences(self):
        rng = np.random.default_rng(8)
        prob = make_problem(steps=5)
        for trial in range(4):
            x_hat = rng.normal(size=8) * 0.2
            obs = CircleObstacle(
                center=(x_hat[0] + 0.15, x_hat[1] - 0.05), radius=0.45
            )
            rho = make_rho(x_hat, x_ref=(1.5, 0, 1), circles=[obs])
            z = (rng.normal(size=15) * 0.05 + np.tile(U_HOVER, 5)).ravel()
            grad = prob.gradient(z, rho, q=300.0)
            fd = np.empty_like(grad)
            eps = 1e-6
            for i in range(z.size):
                dz = np.zeros_like(z)
                dz[i] = eps
                hi, _ = prob.penalized(z + dz, rho, 300.0)
                lo, _ = prob.penalized(z - dz, rho, 300.0)
                fd[i] = (hi - lo) / (2 * eps)
            denom = max(np.linalg.norm(fd), 1.0)
            assert np.linalg.norm(grad - fd) / denom < 1e-5

    def test_penalty_gradient_scales_with_q(self):
        rng = np.random.default_rng(9)
        prob = make_problem()
        x_hat = rng.normal(size=8) * 0.1
        obs = CircleObstacle(center=(x_hat[0], x_hat[1]), radius=0.7)
        rho = make_rho(x_hat, x_ref=(1, 0, 1), circles=[obs])
        z = np.tile(U_HOVER, 5)
        g0 = prob.gradient(z, rho, q=1e-12)  # essentially the cost gradient
        g1 = prob.gradient(z, rho, q=100.0)
        g2 = prob.gradient(z, rho, q=200.0)
        np.testing.assert_allclose(g2 - g0, 2.0 * (g1 - g0), rtol=1e-6, atol=1e-9)

    def test_monotone_in_q(self):
        prob = make_problem()
        obs = CircleObstacle(center=(0.0, 0.0), radius=0.8)
        rho = make_rho(hover_state((0, 0, 1)), x_ref=(1, 0, 1), circles=[obs])
        z = np.tile(U_HOVER, 5)
        vals = [prob.penalized(z, rho, q)[0] for q in (10.0, 100.0, 1000.0)]
        assert vals[0] < vals[1] < vals[2]


class TestPacking:
    def test_empty_detections_fill_far_slots(self):
        rho = make_rho(hover_state((0, 0, 1)))
        assert rho.circles.shape == (CIRCLE_SLOTS, 3)
        assert rho.rects.shape == (RECT_SLOTS, 12)
        assert rho.n_active_circles == 0
        assert rho.n_active_rects == 0
        assert np.all(rho.circles[:, 0] > 1e5)

    def test_nearest_circles_win_slots(self):
        x_hat = hover_state((0, 0, 1))
        circles = [
            CircleObstacle(center=(0.5 + 0.2 * i, 0.0), radius=0.1) for i in range(7)
        ]
        rng = np.random.default_rng(4)
        shuffled = [circles[i] for i in rng.permutation(7)]
        rho = make_rho(x_hat, circles=shuffled)
        assert rho.n_active_circles == CIRCLE_SLOTS
        kept = circle_obstacles(rho)[:CIRCLE_SLOTS]
        np.testing.assert_allclose(
            [c.center[0] for c in kept], [0.5, 0.7, 0.9, 1.1, 1.3]
        )

    def test_distance_filter_drops_far_obstacles(self):
        x_hat = hover_state((0, 0, 1))
        near = CircleObstacle(center=(1.0, 0.0), radius=0.2)
        far = CircleObstacle(center=(10.0, 0.0), radius=0.2)
        seg_far = LineSegment((8.0, -1.0), (8.0, 1.0))
        rho = make_rho(x_hat, circles=[near, far], segments=[seg_far])
        assert rho.n_active_circles == 1
        assert rho.n_active_rects == 0

    def test_boundary_distance_counts_not_center(self):
        # center beyond 3 m but the rim reaches within: still packed
        x_hat = hover_state((0, 0, 1))
        big = CircleObstacle(center=(3.5, 0.0), radius=1.0)
        rho = make_rho(x_hat, circles=[big])
        assert rho.n_active_circles == 1

    def test_round_trip_retains_obstacles(self):
        x_hat = hover_state((0, 0, 1))
        obs = CircleObstacle(center=(1.2, -0.4), radius=0.33)
        rho = make_rho(x_hat, circles=[obs])
        back = ParameterVector.from_vector(rho.as_vector())
        got = circle_obstacles(back)[0]
        np.testing.assert_allclose(got.center, obs.center)
        assert got.radius == pytest.approx(obs.radius)

    def test_vector_length_is_fixed(self):
        rho_a = make_rho(hover_state((0, 0, 1)))
        rho_b = make_rho(
            hover_state((0, 0, 1)),
            circles=[CircleObstacle(center=(1, 0), radius=0.3)],
            segments=[LineSegment((1.0, -1.0), (1.0, 1.0))],
        )
        assert rho_a.as_vector().shape == rho_b.as_vector().shape

    def test_from_vector_rejects_bad_length(self):
        with pytest.raises(ValueError):
            ParameterVector.from_vector(np.zeros(10))

    def test_active_count_validation(self):
        with pytest.raises(ValueError):
            ParameterVector(
                x_hat=np.zeros(8),
                x_ref=np.zeros(8),
                u_ref=U_HOVER,
                u_prev=U_HOVER,
                circles=np.zeros((2, 3)) + [[0, 0, 1]],
                rects=far_rect_rows(1),
                n_active_circles=3,
            )


def far_rect_rows(n):
    from uavnav.constraints import far_rect

    return np.tile(far_rect().params(), (n, 1))


class TestKernelBindings:
    """The compiled kernels must agree with the readable reference."""

    def test_rollout_kernel_matches_reference(self):
        rng = np.random.default_rng(11)
        x0 = rng.normal(size=8) * 0.3
        u = rng.normal(size=(6, 3)) * 0.1 + U_HOVER
        got = _kernels.rollout_states(
            u, x0, MODEL.g, MODEL.ts, MODEL.tau_phi, MODEL.tau_theta,
            MODEL.k_phi, MODEL.k_theta, *MODEL.drag,
        )
        np.testing.assert_allclose(got, rollout(x0, u, MODEL), rtol=1e-13)

    def test_penalty_term_matches_assembled_norm(self):
        rng = np.random.default_rng(12)
        prob = make_problem(steps=4)
        x_hat = rng.normal(size=8) * 0.2
        obs = CircleObstacle(center=(x_hat[0] + 0.1, x_hat[1]), radius=0.5)
        seg = LineSegment((x_hat[0] - 0.3, -1.0), (x_hat[0] - 0.3, 1.0))
        rho = make_rho(x_hat, x_ref=(1, 0, 1), circles=[obs], segments=[seg])
        u = rng.normal(size=(4, 3)) * 0.15 + U_HOVER
        g = assemble_residuals(
            u, rho.x_hat, rho.u_prev,
            circle_obstacles(rho)[: rho.n_active_circles],
            [r for r in _rects(rho)], RATES, MODEL,
        )
        _v, _c, pen, _grad = _kernels.penalized_value_grad(u, *prob.kernel_args(rho, 1.0))
        assert pen == pytest.approx(float(g @ g), rel=1e-12)

    def test_value_only_kernel_is_bitwise_equal(self):
        rng = np.random.default_rng(13)
        prob = make_problem(steps=4)
        x_hat = rng.normal(size=8) * 0.2
        obs = CircleObstacle(center=(x_hat[0], x_hat[1] + 0.2), radius=0.6)
        rho = make_rho(x_hat, x_ref=(1, 0.5, 1), circles=[obs])
        u = rng.normal(size=(4, 3)) * 0.12 + U_HOVER
        args = prob.kernel_args(rho, 850.0)
        v_full, _c, _p, _g = _kernels.penalized_value_grad(u, *args)
        v_only = _kernels.penalized_value(u, *args)
        assert v_only == v_full

    def test_constraint_norms_match_reference(self):
        rng = np.random.default_rng(14)
        prob = make_problem(steps=4)
        x_hat = rng.normal(size=8) * 0.2
        obs = CircleObstacle(center=(x_hat[0] + 0.05, x_hat[1]), radius=0.55)
        rho = make_rho(x_hat, x_ref=(1, 0, 1), circles=[obs])
        u = rng.normal(size=(4, 3)) * 0.2 + U_HOVER
        g = assemble_residuals(
            u, rho.x_hat, rho.u_prev, circle_obstacles(rho)[:1], [], RATES, MODEL
        )
        gmax, gtwo = prob.constraint_norms(u.ravel(), rho)
        assert gmax == pytest.approx(float(np.max(np.abs(g))), rel=1e-12)
        assert gtwo == pytest.approx(float(np.linalg.norm(g)), rel=1e-12)

    def test_active_slot_slicing_is_exact(self):
        rng = np.random.default_rng(15)
        prob = make_problem(steps=4)
        x_hat = rng.normal(size=8) * 0.1
        obs = CircleObstacle(center=(x_hat[0] + 0.1, x_hat[1]), radius=0.5)
        rho = make_rho(x_hat, x_ref=(1, 0, 1), circles=[obs])
        u = rng.normal(size=(4, 3)) * 0.1 + U_HOVER
        sliced = prob.kernel_args(rho, 2000.0)
        full = list(sliced)
        full[7] = rho.circles
        full[8] = rho.rects
        va, _ca, pa, ga = _kernels.penalized_value_grad(u, *sliced)
        vb, _cb, pb, gb = _kernels.penalized_value_grad(u, *tuple(full))
        assert va == vb and pa == pb
        np.testing.assert_array_equal(ga, gb)


def _rects(rho):
    from uavnav.problem import rect_obstacles

    return rect_obstacles(rho)[: rho.n_active_rects]


def test_problem_rejects_timestep_mismatch():
    with pytest.raises(ValueError):
        NmpcProblem(
            model=ModelParams(ts=0.05),
            weights=CostWeights(),
            horizon=HorizonConfig(steps=5, ts=0.1),
            rate_bounds=RATES,
        )


def test_problem_rejects_wrong_variable_count():
    prob = make_problem(steps=5)
    rho = make_rho(hover_state((0, 0, 1)))
    with pytest.raises(ValueError):
        prob.cost(np.zeros(7), rho)


def test_weights_validation():
    with pytest.raises(ValueError):
        CostWeights(state=(1,) * 7)
    with pytest.raises(ValueError):
        CostWeights(input=(-1.0, 1.0, 1.0))
