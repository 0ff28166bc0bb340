"""First-order Riemannian minimization over any manifold in this package.

A manifold handle must expose ``metric``, ``norm``, ``project``,
``egrad2rgrad`` and ``retract``; a problem exposes ``objective`` and
``euclidean_gradient``.  Steepest descent with Armijo backtracking is the
default; Fletcher-Reeves conjugate gradient with projection-based transport
is available as an option.  Runs are deterministic: same inputs and config
give bitwise-identical iterate sequences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidInput, NotConverged, NotPositiveDefinite, ProjectionFailed

TERMINATION_REASONS = ("Converged", "MaxIter", "StalledAtBoundary", "LineSearchFailed")


@dataclass
class ManifoldProblem:
    objective: Callable[[np.ndarray], float]
    euclidean_gradient: Callable[[np.ndarray], np.ndarray]


@dataclass
class ArmijoConfig:
    c1: float = 1e-4
    backtrack: float = 0.5  # safeguard floor for interpolated trial steps
    max_backtracks: int = 30
    # Cap on the Riemannian length of a trial step (t * ||direction||_x).
    # On multiplicative geometries this bounds the per-block log-change, which
    # prevents single steps from crushing coupling entries orders of magnitude
    # below their optimum (recovery from below is extremely slow there).
    max_step_length: float = 8.0
    # consecutive iterations with sub-roundoff decrease before giving up
    stagnation_limit: int = 10


@dataclass
class SolverConfig:
    method: str = "steepest_descent"  # or "conjugate_gradient"
    max_iter: int = 1000
    grad_tol: float = 1e-7  # relative to (1 + initial gradient norm)
    armijo: ArmijoConfig = field(default_factory=ArmijoConfig)
    cg_restart: int | None = None  # default: min(ambient grid size, 50)
    # First trial step per iteration: "spectral" seeds the line search with
    # an alternating Barzilai-Borwein step (monotonicity still enforced by
    # Armijo); "double" doubles the last accepted step.  Spectral seeding is
    # the default: plain doubling zigzags badly on ill-conditioned entropic
    # problems.
    initial_step: str = "spectral"

    def __post_init__(self):
        if self.method not in ("steepest_descent", "conjugate_gradient"):
            raise InvalidInput(f"unknown method {self.method!r}")
        if self.initial_step not in ("spectral", "double"):
            raise InvalidInput(f"unknown initial_step policy {self.initial_step!r}")
        if self.grad_tol <= 0 or self.max_iter < 0:
            raise InvalidInput("tolerances and iteration caps must be positive")


@dataclass
class SolveReport:
    objective_trace: list[float] = field(default_factory=list)
    grad_norm_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    wall_time_s: float = 0.0
    termination: str = "MaxIter"
    constraint_residual: float = 0.0
    objective_evaluations: int = 0
    balance_iterations: int = 0

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1]


class InfeasibleStart(InvalidInput):
    pass


def _default_restart(manifold) -> int:
    m = getattr(manifold, "m", None)
    n = getattr(manifold, "n", None)
    if m is not None and n is not None:
        return max(1, min(m * n, 50))
    if n is not None:
        return max(1, min(n, 50))
    return 50


def minimize(problem, manifold, x0, config: SolverConfig | None = None):
    """Minimize ``problem`` over ``manifold`` starting from feasible ``x0``.

    Returns ``(x, SolveReport)``.  Line-search failure and boundary stalls
    terminate the run and are recorded in the report, never raised.
    """
    config = config or SolverConfig()
    arm = config.armijo
    check = getattr(manifold, "check_point", None)
    if check is not None and not check(x0):
        raise InfeasibleStart("x0 violates manifold constraints")

    stats = getattr(manifold, "stats", None)
    balance0 = stats.get("balance_iterations", 0) if stats else 0

    t_start = time.perf_counter()
    report = SolveReport()
    x = np.array(x0, dtype=float)
    f = float(problem.objective(x))
    report.objective_evaluations += 1
    grad = manifold.egrad2rgrad(x, problem.euclidean_gradient(x))
    gnorm = manifold.norm(x, grad)
    gnorm0 = gnorm
    threshold = config.grad_tol * (1.0 + gnorm0)

    direction = -grad
    gg = gnorm**2
    step = 1.0 / (1.0 + gnorm) if gnorm > 0 else 1.0
    restart = config.cg_restart or _default_restart(manifold)
    since_restart = 0
    stagnant = 0
    termination = "MaxIter"

    report.objective_trace.append(f)
    report.grad_norm_trace.append(gnorm)

    for it in range(config.max_iter):
        if gnorm <= threshold:
            termination = "Converged"
            break

        slope = manifold.metric(x, grad, direction)
        if slope >= 0:  # CG produced an ascent direction: fall back
            direction = -grad
            slope = -gg
            since_restart = 0

        # Armijo backtracking with safeguarded quadratic interpolation;
        # retraction failures count as failed trials.
        dir_norm = manifold.norm(x, direction)
        t = min(step, arm.max_step_length / dir_norm) if dir_norm > 0 else step
        accepted = False
        boundary_failures = 0
        trials = 0
        while trials <= arm.max_backtracks:
            try:
                x_new = manifold.retract(x, t * direction)
                f_new = float(problem.objective(x_new))
                report.objective_evaluations += 1
            except (NotConverged, NotPositiveDefinite, np.linalg.LinAlgError):
                boundary_failures += 1
                t *= 0.25
                trials += 1
                continue
            if np.isfinite(f_new) and f_new <= f + arm.c1 * t * slope:
                accepted = True
                break
            denom = 2.0 * (f_new - f - slope * t)
            t_quad = -slope * t * t / denom if denom > 0 else arm.backtrack * t
            t = min(max(t_quad, 0.1 * t), arm.backtrack * t)
            trials += 1
        if not accepted:
            termination = (
                "StalledAtBoundary" if boundary_failures == trials else "LineSearchFailed"
            )
            break
        if f - f_new <= 8.0 * np.finfo(float).eps * abs(f):
            stagnant += 1
            if stagnant >= arm.stagnation_limit:
                x, f = x_new, f_new
                report.objective_trace.append(f)
                report.iterations = it + 1
                termination = "LineSearchFailed"
                break
        else:
            stagnant = 0

        x_old_grad = grad
        x, f = x_new, f_new
        try:
            grad_new = manifold.egrad2rgrad(x, problem.euclidean_gradient(x))
        except (NotPositiveDefinite, ProjectionFailed, np.linalg.LinAlgError):
            report.objective_trace.append(f)
            report.iterations = it + 1
            termination = "StalledAtBoundary"
            break
        gnorm_new = manifold.norm(x, grad_new)
        gg_new = gnorm_new**2

        if config.initial_step == "spectral" and config.method == "steepest_descent":
            s = manifold.project(x, t * direction)
            y = grad_new - manifold.project(x, x_old_grad)
            sy = manifold.metric(x, s, y)
            if sy > 0:
                if it % 2 == 0:
                    step = manifold.metric(x, s, s) / sy
                else:
                    yy = manifold.metric(x, y, y)
                    step = sy / yy if yy > 0 else 2.0 * t
            else:
                step = 2.0 * t
        else:
            step = 2.0 * t

        since_restart += 1
        if config.method == "conjugate_gradient" and since_restart < restart and gg > 0:
            beta = gg_new / gg
            direction = -grad_new + beta * manifold.project(x, direction)
        else:
            direction = -grad_new
            since_restart = 0
        grad, gnorm, gg = grad_new, gnorm_new, gg_new

        report.objective_trace.append(f)
        report.grad_norm_trace.append(gnorm)
        report.iterations = it + 1
    else:
        if gnorm <= threshold:
            termination = "Converged"

    report.termination = termination
    report.wall_time_s = time.perf_counter() - t_start
    if stats:
        report.balance_iterations = stats.get("balance_iterations", 0) - balance0
    resid = getattr(manifold, "feasibility_residual", None)
    if resid is not None:
        report.constraint_residual = float(resid(x))
    return x, report


def gradient_check(problem, manifold, x, directions, h_grid=None) -> float:
    """Worst relative mismatch of ``<grad, u>`` against central differences
    of the objective through the retraction, at the best step per direction."""
    if h_grid is None:
        h_grid = np.logspace(-2, -7, 11)
    grad = manifold.egrad2rgrad(x, problem.euclidean_gradient(x))
    worst = 0.0
    for u in directions:
        un = manifold.norm(x, u)
        if un == 0:
            raise InvalidInput("zero direction in gradient check")
        u = u / un
        analytic = manifold.metric(x, grad, u)
        best = np.inf
        for h in h_grid:
            fp = problem.objective(manifold.retract(x, h * u))
            fm = problem.objective(manifold.retract(x, -h * u))
            fd = (fp - fm) / (2.0 * h)
            best = min(best, abs(fd - analytic) / max(1.0, abs(analytic)))
        worst = max(worst, best)
    return worst
