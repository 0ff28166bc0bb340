"""Matrix-valued transport objectives, cost builders and scalar oracles.

The main entry point is :func:`solve_mw`, which minimizes the (optionally
regularized) linear transport objective ``sum_ij tr(C_ij G_ij)`` over the
block-SPD coupling manifold.  The scalar oracles at the bottom
(:func:`scalar_ot_exact`, :func:`scalar_sinkhorn`) are self-contained
implementations used to cross-validate the matrix solver on lifted
instances; they never call into the manifold machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .blocks import BlockMarginal, Coupling
from .coupling import BlockCouplingManifold
from .errors import InvalidInput
from .solvers import ManifoldProblem, SolveReport, SolverConfig, minimize

REGULARIZERS = ("none", "quantum_entropy", "squared_frobenius")


@dataclass(frozen=True)
class CostField:
    """Grid of PSD cost blocks ``C_ij``.

    Small negative eigenvalues (above ``-1e-12`` relative to the largest)
    are clipped to zero on construction; anything lower is rejected.
    """

    blocks: np.ndarray

    def __post_init__(self):
        blocks = linalg.sym(self.blocks)
        if blocks.ndim != 4:
            raise InvalidInput(f"expected (m, n, d, d) cost blocks, got {blocks.shape}")
        w, v = np.linalg.eigh(blocks)
        top = np.maximum(w[..., -1:], 0.0)
        if np.any(w < -1e-12 * np.maximum(top, 1e-300)):
            raise InvalidInput("cost blocks are not positive semi-definite")
        w = np.clip(w, 0.0, None)
        clipped = np.einsum("ijab,ijb,ijcb->ijac", v, w, v)
        object.__setattr__(self, "blocks", linalg.sym_part(clipped))

    @property
    def shape(self):
        return self.blocks.shape


@dataclass(frozen=True)
class RegularizedProblem:
    """Transport cost plus ``epsilon`` times a strictly convex regularizer."""

    cost: CostField
    epsilon: float = 0.0
    regularizer: str = "quantum_entropy"

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise InvalidInput(f"unknown regularizer {self.regularizer!r}")
        if self.epsilon < 0:
            raise InvalidInput("epsilon must be nonnegative")
        if self.epsilon > 0 and self.regularizer == "none":
            raise InvalidInput("epsilon > 0 requires a regularizer")


def quantum_entropy_value(blocks: np.ndarray) -> float:
    """``sum_ij tr(G log G - G)`` with the ``x log x -> 0`` convention."""
    w = np.linalg.eigvalsh(linalg.sym_part(blocks))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(w > 0.0, w * np.log(np.where(w > 0.0, w, 1.0)) - w, 0.0)
    return float(terms.sum())


def transport_cost(problem: RegularizedProblem, blocks: np.ndarray) -> float:
    """The linear part ``sum_ij tr(C_ij G_ij)``."""
    return float(np.einsum("ijab,ijba->", problem.cost.blocks, blocks))


def mw_objective(problem: RegularizedProblem, blocks: np.ndarray) -> float:
    value = transport_cost(problem, blocks)
    if problem.epsilon > 0:
        if problem.regularizer == "quantum_entropy":
            value += problem.epsilon * quantum_entropy_value(blocks)
        else:
            value += problem.epsilon * 0.5 * float(np.sum(blocks**2))
    return value


def mw_euclidean_gradient(problem: RegularizedProblem, blocks: np.ndarray) -> np.ndarray:
    grad = np.array(problem.cost.blocks)
    if problem.epsilon > 0:
        if problem.regularizer == "quantum_entropy":
            grad = grad + problem.epsilon * linalg.spd_log(blocks)
        else:
            grad = grad + problem.epsilon * linalg.sym_part(blocks)
    return grad


@dataclass
class MwResult:
    coupling: Coupling
    value: float  # objective at the solution, including the epsilon term
    transport_cost: float  # linear part only
    report: SolveReport


def solve_mw(
    p: BlockMarginal,
    q: BlockMarginal,
    problem: RegularizedProblem,
    config: SolverConfig | None = None,
    x0=None,
    continuation=False,
    manifold: BlockCouplingManifold | None = None,
) -> MwResult:
    """Minimize the (regularized) transport objective over couplings of (p, q).

    ``continuation`` warm-starts the solve through a decreasing epsilon
    schedule ending at the target: ``True`` halves from 0.1, a float gives
    the reduction ratio, and a sequence is used verbatim (the target epsilon
    is appended if missing).  Pure linear solves (epsilon = 0) are
    boundary-seeking: the solver typically stalls near the boundary and the
    reported transport cost is an upper bound on the optimum.
    """
    man = manifold or BlockCouplingManifold(p, q)
    if isinstance(x0, Coupling):
        x = np.array(x0.blocks)
    elif x0 is not None:
        x = np.array(x0, dtype=float)
    else:
        x = man.initial_point()

    schedule = [problem.epsilon]
    if continuation is not False and problem.epsilon > 0:
        if continuation is True:
            ratio = 2.0
        elif np.isscalar(continuation):
            ratio = float(continuation)
        else:
            ratio = None
        if ratio is not None:
            eps = 0.1
            schedule = []
            while eps > problem.epsilon * 1.0000001:
                schedule.append(eps)
                eps /= ratio
            schedule.append(problem.epsilon)
        else:
            schedule = [float(e) for e in continuation]
            if not schedule or abs(schedule[-1] - problem.epsilon) > 1e-15:
                schedule.append(problem.epsilon)

    report = None
    for eps in schedule:
        stage = RegularizedProblem(problem.cost, eps, problem.regularizer)
        mproblem = ManifoldProblem(
            objective=lambda b, s=stage: mw_objective(s, b),
            euclidean_gradient=lambda b, s=stage: mw_euclidean_gradient(s, b),
        )
        x, stage_report = minimize(mproblem, man, x, config)
        if report is None:
            report = stage_report
        else:
            report.objective_trace += stage_report.objective_trace
            report.grad_norm_trace += stage_report.grad_norm_trace
            report.iterations += stage_report.iterations
            report.wall_time_s += stage_report.wall_time_s
            report.objective_evaluations += stage_report.objective_evaluations
            report.balance_iterations += stage_report.balance_iterations
            report.termination = stage_report.termination
            report.constraint_residual = stage_report.constraint_residual

    # polish feasibility to the balancing tolerance before wrapping
    from .coupling import _mbalance_raw

    try:
        x, _ = _mbalance_raw(x, p.blocks, q.blocks, tol=man.balance_tol, max_iter=man.balance_max_iter)
    except Exception:
        pass  # keep the raw iterate; the Coupling constructor enforces feas_tol
    coupling = Coupling(x, p, q, feas_tol=man.feas_tol)
    return MwResult(
        coupling=coupling,
        value=mw_objective(problem, x),
        transport_cost=transport_cost(problem, x),
        report=report,
    )


# ---------------------------------------------------------------------------
# Cost builders
# ---------------------------------------------------------------------------


def cost_scaled_identity(x, y, d: int, distance=None) -> CostField:
    """``C_ij = dist(x_i, y_j)^2 * I_d`` for a metric ``dist`` (default
    Euclidean on flattened samples)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m, n = x.shape[0], y.shape[0]
    if distance is None:
        diffs = x.reshape(m, 1, -1) - y.reshape(1, n, -1)
        d2 = np.sum(diffs**2, axis=-1)
    else:
        d2 = np.array([[distance(xi, yj) ** 2 for yj in y] for xi in x])
    return CostField(d2[..., None, None] * np.eye(d))


def cost_outer_difference(x, y) -> CostField:
    """``C_ij = (X_i - Y_j)(X_i - Y_j)^T`` for matrix samples of shape (d, s)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    if y.ndim == 2:
        y = y[:, :, None]
    diff = x[:, None] - y[None, :]  # (m, n, d, s)
    return CostField(diff @ np.swapaxes(diff, -1, -2))


def cost_grid_sq_euclidean(x_pos, y_pos, d: int) -> CostField:
    """``C_ij = ||x_i - y_j||^2 * I_d`` for grid positions."""
    return cost_scaled_identity(np.atleast_2d(x_pos).reshape(len(x_pos), -1),
                                np.atleast_2d(y_pos).reshape(len(y_pos), -1), d)


def build_cost(kind: str, **kwargs) -> CostField:
    builders = {
        "scaled_identity": cost_scaled_identity,
        "outer_difference": cost_outer_difference,
        "grid_sq_euclidean": cost_grid_sq_euclidean,
    }
    try:
        builder = builders[kind]
    except KeyError:
        raise InvalidInput(f"unknown cost kind {kind!r}") from None
    return builder(**kwargs)


# ---------------------------------------------------------------------------
# Metric axiom checking
# ---------------------------------------------------------------------------


@dataclass
class AxiomReport:
    cost_symmetric: bool
    cost_diagonal_zero: bool
    cost_offdiag_definite: bool
    trace_triangle_min_margin: float
    empirical_run: bool = False
    mw_symmetry_max_rel: float | None = None
    mw_self_max: float | None = None
    mw_triangle_min_slack: float | None = None
    epsilon: float | None = None

    @property
    def cost_conditions_ok(self) -> bool:
        return (
            self.cost_symmetric
            and self.cost_diagonal_zero
            and self.cost_offdiag_definite
            and self.trace_triangle_min_margin >= -1e-12
        )


def check_metric_axioms(
    costs: CostField,
    trials: int = 20,
    epsilon: float = 1e-4,
    rng: np.random.Generator | None = None,
    config: SolverConfig | None = None,
    triangle_triples: int = 10,
    pool_size: int = 6,
    symmetry_pairs: int = 3,
    self_checks: int = 2,
    continuation=10.0,
) -> AxiomReport:
    """Verify the cost conditions for the transport distance to be a metric,
    then (if they hold) empirically verify symmetry, self-distance and the
    triangle inequality on random lifted marginals.

    The empirical phase draws ``pool_size`` random marginals, computes their
    pairwise distances once, and samples ``triangle_triples`` triples from
    the pool.  It needs equal supports (a square n x n cost grid) and is
    skipped, with ``empirical_run=False``, when the cost conditions fail.
    """
    rng = rng or np.random.default_rng(0)
    c = costs.blocks
    m, n, d, _ = c.shape
    if m != n:
        raise InvalidInput("metric axioms need equal supports (square cost grid)")

    sym_ok = bool(np.allclose(c, c.transpose(1, 0, 2, 3), atol=1e-10))
    diag = np.array([c[i, i] for i in range(n)])
    diag_ok = bool(np.max(linalg.frob(diag)) <= 1e-12) if n > 0 else True
    off_min = np.inf
    for i in range(n):
        for j in range(n):
            if i != j:
                off_min = min(off_min, float(np.linalg.eigvalsh(c[i, j])[0]))
    definite_ok = bool(off_min > 0) if n > 1 else True

    margin = np.inf
    for _ in range(trials):
        a = rng.standard_normal((d, d))
        a = a @ a.T
        ta = np.sqrt(np.maximum(np.einsum("ijab,ba->ij", c, a), 0.0))
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    margin = min(margin, float(ta[i, k] + ta[j, k] - ta[i, j]))

    report = AxiomReport(
        cost_symmetric=sym_ok,
        cost_diagonal_zero=diag_ok,
        cost_offdiag_definite=definite_ok,
        trace_triangle_min_margin=margin,
    )
    if not report.cost_conditions_ok:
        return report

    def mw(p_vec, q_vec, cost_field=costs):
        res = solve_mw(
            BlockMarginal.lifted(p_vec, d),
            BlockMarginal.lifted(q_vec, d),
            RegularizedProblem(cost_field, epsilon, "quantum_entropy"),
            config=config,
            continuation=continuation,
        )
        return float(np.sqrt(max(res.transport_cost, 0.0)))

    def random_simplex():
        w = rng.uniform(0.2, 1.0, size=n)
        return w / w.sum()

    pool = [random_simplex() for _ in range(pool_size)]
    dist = np.zeros((pool_size, pool_size))
    for i in range(pool_size):
        for j in range(i + 1, pool_size):
            dist[i, j] = dist[j, i] = mw(pool[i], pool[j])

    transposed = CostField(costs.blocks.transpose(1, 0, 2, 3))
    sym_rel = 0.0
    for i in range(min(symmetry_pairs, pool_size - 1)):
        dab = dist[i, i + 1]
        dba = mw(pool[i + 1], pool[i], transposed)
        sym_rel = max(sym_rel, abs(dab - dba) / max(dab, 1e-30))

    self_max = max(mw(pool[i], pool[i]) for i in range(min(self_checks, pool_size)))

    tri_slack = np.inf
    for _ in range(triangle_triples):
        i, j, k = rng.choice(pool_size, size=3, replace=False)
        tri_slack = min(tri_slack, dist[i, j] + dist[j, k] - dist[i, k])

    report.empirical_run = True
    report.mw_symmetry_max_rel = sym_rel
    report.mw_self_max = self_max
    report.mw_triangle_min_slack = tri_slack
    report.epsilon = epsilon
    return report


# ---------------------------------------------------------------------------
# Scalar oracles
# ---------------------------------------------------------------------------


def scalar_ot_exact(p, q, cost, tol: float = 1e-12, max_pivots: int | None = None):
    """Exact scalar optimal transport by the transportation simplex.

    Northwest-corner start, MODI (u-v) pivoting, Bland-style entering rule
    and lexicographic leaving rule for anti-cycling.  Returns the optimal
    coupling and its cost.  Intended for small, well-scaled instances.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    cost = np.asarray(cost, dtype=float)
    m, n = p.size, q.size
    if cost.shape != (m, n):
        raise InvalidInput(f"cost shape {cost.shape} does not match marginals ({m}, {n})")
    if np.any(p < 0) or np.any(q < 0) or not np.isclose(p.sum(), q.sum()):
        raise InvalidInput("marginals must be nonnegative with equal sums")
    if max_pivots is None:
        max_pivots = 200 * (m + n) + 200

    # northwest corner initial basic feasible solution
    flow = np.zeros((m, n))
    basis: list[tuple[int, int]] = []
    ri, cj = p.copy(), q.copy()
    i = j = 0
    while i < m and j < n:
        t = min(ri[i], cj[j])
        flow[i, j] = t
        basis.append((i, j))
        ri[i] -= t
        cj[j] -= t
        if i == m - 1 and j == n - 1:
            break
        # advance; on a tie move only one index to keep m+n-1 basic cells
        if ri[i] <= cj[j] and i < m - 1:
            i += 1
        elif j < n - 1:
            j += 1
        else:
            i += 1

    def duals(basis_set):
        u = np.full(m, np.nan)
        v = np.full(n, np.nan)
        u[0] = 0.0
        adj_rows = {i_: [] for i_ in range(m)}
        adj_cols = {j_: [] for j_ in range(n)}
        for (bi, bj) in basis_set:
            adj_rows[bi].append(bj)
            adj_cols[bj].append(bi)
        stack = [("r", 0)]
        while stack:
            kind, idx = stack.pop()
            if kind == "r":
                for bj in adj_rows[idx]:
                    if np.isnan(v[bj]):
                        v[bj] = cost[idx, bj] - u[idx]
                        stack.append(("c", bj))
            else:
                for bi in adj_cols[idx]:
                    if np.isnan(u[bi]):
                        u[bi] = cost[bi, idx] - v[idx]
                        stack.append(("r", bi))
        return u, v

    def find_cycle(basis_set, enter):
        # path from row enter[0] to col enter[1] in the basis tree
        adj = {("r", i_): [] for i_ in range(m)}
        adj.update({("c", j_): [] for j_ in range(n)})
        for (bi, bj) in basis_set:
            adj[("r", bi)].append(("c", bj))
            adj[("c", bj)].append(("r", bi))
        start, goal = ("r", enter[0]), ("c", enter[1])
        prev = {start: None}
        stack = [start]
        while stack:
            node = stack.pop()
            if node == goal:
                break
            for nxt in adj[node]:
                if nxt not in prev:
                    prev[nxt] = node
                    stack.append(nxt)
        path = [goal]
        while prev[path[-1]] is not None:
            path.append(prev[path[-1]])
        path.reverse()  # r_i0, c_j1, r_i1, ..., c_{enter[1]}
        cells = [enter]
        for a, b in zip(path[:-1], path[1:]):
            if a[0] == "r":
                cells.append((a[1], b[1]))
            else:
                cells.append((b[1], a[1]))
        return cells  # alternating +,-,+,- starting with the entering cell

    for _ in range(max_pivots):
        u, v = duals(basis)
        reduced = cost - u[:, None] - v[None, :]
        entering = None
        for bi in range(m):  # Bland: smallest (i, j) with negative reduced cost
            for bj in range(n):
                if (bi, bj) not in set(basis) and reduced[bi, bj] < -tol:
                    entering = (bi, bj)
                    break
            if entering:
                break
        if entering is None:
            break
        cycle = find_cycle(basis, entering)
        minus_cells = cycle[1::2]
        theta = min(flow[c_] for c_ in minus_cells)
        leaving = min(c_ for c_ in minus_cells if flow[c_] <= theta + 1e-15)
        for idx, c_ in enumerate(cycle):
            flow[c_] += theta if idx % 2 == 0 else -theta
        basis.remove(leaving)
        basis.append(entering)
        flow[leaving] = 0.0
    else:
        raise InvalidInput("transportation simplex exceeded its pivot budget")

    return flow, float(np.sum(cost * flow))


def scalar_sinkhorn(p, q, cost, epsilon, tol: float = 1e-13, max_iter: int = 100000):
    """Entropy-regularized scalar transport by log-domain Sinkhorn scaling."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if epsilon <= 0:
        raise InvalidInput("epsilon must be positive")
    log_p, log_q = np.log(p), np.log(q)
    log_k = -cost / epsilon
    f = np.zeros(p.size)
    g = np.zeros(q.size)

    def logsumexp(a, axis):
        hi = a.max(axis=axis, keepdims=True)
        return (hi + np.log(np.sum(np.exp(a - hi), axis=axis, keepdims=True))).squeeze(axis)

    for _ in range(max_iter):
        f = log_p - logsumexp(log_k + g[None, :], axis=1)
        g = log_q - logsumexp(log_k + f[:, None], axis=0)
        gamma = np.exp(f[:, None] + log_k + g[None, :])
        if (
            np.max(np.abs(gamma.sum(axis=1) - p)) < tol
            and np.max(np.abs(gamma.sum(axis=0) - q)) < tol
        ):
            return gamma
    return gamma
