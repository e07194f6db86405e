"""Box-constrained first-order solver and the penalty loop around it.

The inner solver minimizes a smooth function over a box.  Each iteration
takes the projected-gradient point

    zbar = proj(z - gamma * grad f(z)),

accelerates it with an L-BFGS direction built from the history of
fixed-point residuals r = (z - zbar) / gamma, and globalizes the step by
backtracking on the forward-backward envelope

    fbe(z) = f(z) + grad f(z).(zbar - z) + ||zbar - z||^2 / (2 gamma),

which decreases strictly as long as gamma is below the reciprocal local
Lipschitz constant; gamma itself is adapted by a standard sufficient
decrease test.  Every candidate is projected onto the box before it is
evaluated, so all iterates stay feasible with respect to the input
bounds, and the pure projected-gradient step is the fallback whenever
the quasi-Newton candidate fails the envelope test.  The solver is
deterministic: identical inputs produce identical iterates.

Obstacle and rate constraints are not part of the box; they enter
through a quadratic penalty q * ||G||^2 that the outer loop re-solves
with an increasing schedule of q values, warm starting each stage at the
previous solution, and stops as soon as the largest residual is within
tolerance.  A wall-clock deadline is threaded through the whole loop and
checked once per inner iteration, so a solve always returns the best
iterate it has when the budget runs out.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import _kernels
from .model import INPUT_DIM
from .problem import NmpcProblem, ParameterVector

#: target ratio gamma * L; also sets the envelope decrease margin
_ALPHA = 0.95
#: halvings of the line-search parameter before falling back to zbar
_MAX_BACKTRACKS = 10
_GAMMA_MIN = 1e-14


@dataclass(frozen=True)
class BoxBounds:
    """Per-step input box, replicated across the horizon."""

    u_min: tuple[float, float, float] = (5.0, -0.2, -0.2)
    u_max: tuple[float, float, float] = (13.5, 0.2, 0.2)

    def __post_init__(self) -> None:
        if any(lo > hi for lo, hi in zip(self.u_min, self.u_max)):
            raise ValueError("every lower bound must not exceed its upper bound")

    def stacked(self, steps: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Flat (lower, upper) arrays for a horizon of ``steps`` inputs."""
        lower = np.tile(np.asarray(self.u_min, dtype=float), steps)
        upper = np.tile(np.asarray(self.u_max, dtype=float), steps)
        return lower, upper


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances, penalty schedule and budgets of the penalty solver."""

    q_schedule: tuple[float, ...] = (1000.0, 4000.0, 16000.0, 64000.0)
    fpr_tol: float = 1e-3
    constraint_tol: float = 1e-2
    time_budget: float = 0.04
    max_inner_iters: int = 500
    lbfgs_memory: int = 10

    def __post_init__(self) -> None:
        if len(self.q_schedule) == 0 or min(self.q_schedule) <= 0:
            raise ValueError("penalty schedule must be nonempty and positive")
        if any(b <= a for a, b in zip(self.q_schedule, self.q_schedule[1:])):
            raise ValueError("penalty schedule must be strictly increasing")
        if self.fpr_tol <= 0 or self.constraint_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.time_budget <= 0:
            raise ValueError("time budget must be positive")
        if self.max_inner_iters < 1 or self.lbfgs_memory < 1:
            raise ValueError("iteration and memory limits must be at least 1")


@dataclass
class PanocResult:
    """Outcome of one inner solve."""

    z: NDArray[np.float64]
    fpr_norm: float
    iters: int
    converged: bool


@dataclass
class SolverOutput:
    """Outcome of a full penalty solve, plus per-stage diagnostics."""

    u_seq: NDArray[np.float64]
    cost: float
    infeasibility: float
    max_violation: float
    fpr_norm: float
    outer_iters: int
    inner_iters: int
    elapsed: float
    converged: bool
    stage_infeasibility: tuple[float, ...] = field(default_factory=tuple)
    exit_stage: int = -1


def project_box(
    z: NDArray[np.floating],
    lower: NDArray[np.floating],
    upper: NDArray[np.floating],
) -> NDArray[np.float64]:
    """Euclidean projection onto the box [lower, upper]."""
    return np.minimum(np.maximum(np.asarray(z, dtype=float), lower), upper)


def _initial_gamma(fg, z, grad, lower, upper) -> float:
    """Step size from a one-sided finite-difference Lipschitz probe.

    The probe points into the box so the probe point stays feasible even
    when the start sits on a bound.
    """
    step = 1e-6 * np.maximum(1.0, np.abs(z))
    inward = np.where(upper - z >= z - lower, 1.0, -1.0)
    delta = step * inward
    _, grad_probe = fg(z + delta)
    lips = float(np.linalg.norm(grad_probe - grad) / np.linalg.norm(delta))
    lips = max(lips, 1e-10)
    return min(_ALPHA / lips, 1e6)


def _lbfgs_direction(
    residual: NDArray[np.float64],
    s_hist: list[NDArray[np.float64]],
    y_hist: list[NDArray[np.float64]],
) -> NDArray[np.float64]:
    """Two-loop recursion: approximate -(inverse Jacobian) * residual."""
    d = -residual.copy()
    alphas = []
    rhos = [1.0 / float(s @ y) for s, y in zip(s_hist, y_hist)]
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = rho * float(s @ d)
        alphas.append(a)
        d -= a * y
    s_last, y_last = s_hist[-1], y_hist[-1]
    d *= float(s_last @ y_last) / float(y_last @ y_last)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rhos), reversed(alphas)):
        b = rho * float(y @ d)
        d += (a - b) * s
    return d


def panoc_solve(
    fg,
    lower: NDArray[np.floating],
    upper: NDArray[np.floating],
    z0: NDArray[np.floating],
    config: SolverConfig,
    deadline: float | None = None,
    trace: list | None = None,
) -> PanocResult:
    """Minimize a smooth objective over a box from a warm start.

    Parameters
    ----------
    fg : callable
        Maps a point to ``(value, gradient)``.  Must be deterministic.
    lower, upper : arrays matching ``z0``
        Box bounds.
    config : SolverConfig
        Supplies fpr_tol, max_inner_iters and lbfgs_memory; the penalty
        specific fields are ignored here.
    deadline : float, optional
        Absolute ``time.perf_counter()`` value after which the solve
        returns its current best iterate.
    trace : list, optional
        When given, appends one ``(fpr, envelope, gamma)`` tuple per
        iteration, for diagnosis and for the monotonicity tests.

    Returns
    -------
    PanocResult
        Final (projected, hence feasible) iterate, its fixed-point
        residual norm, the iteration count and a convergence flag.
    """
    z = project_box(np.asarray(z0, dtype=float).ravel(), lower, upper)
    fz, gz = fg(z)
    if not (np.isfinite(fz) and np.all(np.isfinite(gz))):
        raise ValueError("objective or gradient is not finite at the start point")
    gamma = _initial_gamma(fg, z, gz, lower, upper)

    s_hist: list[NDArray[np.float64]] = []
    y_hist: list[NDArray[np.float64]] = []
    z_prev: NDArray[np.float64] | None = None
    r_prev: NDArray[np.float64] | None = None

    iters = 0
    fpr = np.inf
    sufficient = lambda f0, g0, dz, dz_sq: f0 + float(g0 @ dz) + (
        _ALPHA / (2.0 * gamma)
    ) * dz_sq + 1e-10 * (1.0 + abs(f0))

    while True:
        zbar = project_box(z - gamma * gz, lower, upper)
        dz = zbar - z
        dz_sq = float(dz @ dz)
        fzbar, gzbar = fg(zbar)
        # keep gamma below the reciprocal local Lipschitz constant; the
        # negated comparison also sends non-finite values back here
        while not fzbar <= sufficient(fz, gz, dz, dz_sq) and gamma > _GAMMA_MIN:
            gamma *= 0.5
            s_hist.clear()
            y_hist.clear()
            z_prev = r_prev = None
            zbar = project_box(z - gamma * gz, lower, upper)
            dz = zbar - z
            dz_sq = float(dz @ dz)
            fzbar, gzbar = fg(zbar)

        fpr = np.sqrt(dz_sq) / gamma
        envelope = fz + float(gz @ dz) + dz_sq / (2.0 * gamma)
        if trace is not None:
            trace.append((fpr, envelope, gamma))

        if fpr <= config.fpr_tol:
            return PanocResult(z=zbar, fpr_norm=fpr, iters=iters, converged=True)
        if iters >= config.max_inner_iters:
            return PanocResult(z=zbar, fpr_norm=fpr, iters=iters, converged=False)
        if deadline is not None and time.perf_counter() >= deadline:
            return PanocResult(z=zbar, fpr_norm=fpr, iters=iters, converged=False)

        iters += 1
        residual = (z - zbar) / gamma
        if z_prev is not None:
            s = z - z_prev
            y = residual - r_prev
            sy = float(s @ y)
            if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
                s_hist.append(s)
                y_hist.append(y)
                if len(s_hist) > config.lbfgs_memory:
                    s_hist.pop(0)
                    y_hist.pop(0)
        z_prev = z
        r_prev = residual

        if not s_hist:
            # no curvature information yet: plain projected-gradient step
            z, fz, gz = zbar, fzbar, gzbar
            continue

        direction = _lbfgs_direction(residual, s_hist, y_hist)
        decrease = 0.5 * (1.0 - _ALPHA) * gamma * fpr * fpr
        tau = 1.0
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            cand = project_box(z + (1.0 - tau) * dz + tau * direction, lower, upper)
            fc, gc = fg(cand)
            cand_bar = project_box(cand - gamma * gc, lower, upper)
            cdz = cand_bar - cand
            cand_env = fc + float(gc @ cdz) + float(cdz @ cdz) / (2.0 * gamma)
            if cand_env <= envelope - decrease:
                z, fz, gz = cand, fc, gc
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            # projected-gradient fallback, already evaluated
            z, fz, gz = zbar, fzbar, gzbar


def warm_start_shift(u_seq: NDArray[np.floating]) -> NDArray[np.float64]:
    """Shift an input sequence one step, repeating the final input.

    Standard receding-horizon warm start: the tail of the previous
    solution is the natural guess after one sampling period elapses.
    """
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
    return np.vstack([u_seq[1:], u_seq[-1:]]).ravel()


def penalty_solve(
    problem: NmpcProblem,
    rho: ParameterVector,
    z_warm: NDArray[np.floating],
    config: SolverConfig,
    bounds: BoxBounds,
    start_stage: int = 0,
) -> SolverOutput:
    """Solve one avoidance instance by a sequence of penalized problems.

    Walks the penalty weight schedule, warm starting every stage at the
    previous stage's solution, and exits early once the largest
    constraint residual is within ``config.constraint_tol``.  The
    wall-clock budget spans all stages together.  ``converged`` means
    both the final stage hit its fixed-point tolerance and the residuals
    are within tolerance; when the budget expires first, the best
    iterate so far is returned with ``converged=False``.

    ``start_stage`` skips the first entries of the schedule.  A receding
    horizon controller re-solves an almost identical instance every
    period, so once a solve has converged at some stage there is nothing
    to gain from dragging the shifted warm start through the low-penalty
    stages again; pass the previous solve's ``exit_stage`` to resume the
    schedule there.

    Each stage runs through the compiled twin of :func:`panoc_solve`
    (same algorithm, budget checked once per iteration); the test suite
    pins the two implementations against each other.
    """
    if not 0 <= start_stage < len(config.q_schedule):
        raise ValueError(
            f"start_stage {start_stage} outside schedule of length "
            f"{len(config.q_schedule)}"
        )
    start = time.perf_counter()
    deadline = start + config.time_budget
    lower, upper = bounds.stacked(problem.horizon.steps)
    z = project_box(np.asarray(z_warm, dtype=float).ravel(), lower, upper)

    stage_infeas: list[float] = []
    inner_total = 0
    outer = 0
    fpr = np.inf
    stage_converged = False
    exit_stage = -1
    gmax, gtwo = problem.constraint_norms(z, rho)

    for k in range(start_stage, len(config.q_schedule)):
        remaining = deadline - time.perf_counter()
        if remaining <= 0.0 and outer > 0:
            break
        outer += 1
        exit_stage = k
        z, fpr, iters, ok = _kernels.panoc_stage(
            z,
            *problem.kernel_args(rho, config.q_schedule[k]),
            lower,
            upper,
            config.fpr_tol,
            config.max_inner_iters,
            config.lbfgs_memory,
            max(remaining, 1e-6),
        )
        inner_total += int(iters)
        fpr = float(fpr)
        stage_converged = bool(ok)
        gmax, gtwo = problem.constraint_norms(z, rho)
        stage_infeas.append(gtwo)
        if gmax <= config.constraint_tol:
            break

    return SolverOutput(
        u_seq=z.reshape(problem.horizon.steps, INPUT_DIM),
        cost=problem.cost(z, rho),
        infeasibility=gtwo,
        max_violation=gmax,
        fpr_norm=fpr,
        outer_iters=outer,
        inner_iters=inner_total,
        elapsed=time.perf_counter() - start,
        converged=bool(stage_converged and gmax <= config.constraint_tol),
        stage_infeasibility=tuple(stage_infeas),
        exit_stage=exit_stage,
    )
