import numpy as np
import pytest
from scipy.optimize import linprog

from spdot import linalg
from spdot.blocks import BlockMarginal
from spdot.errors import InvalidInput
from spdot.problems import (
    AxiomReport,
    CostField,
    RegularizedProblem,
    build_cost,
    check_metric_axioms,
    cost_grid_sq_euclidean,
    cost_outer_difference,
    cost_scaled_identity,
    mw_euclidean_gradient,
    mw_objective,
    quantum_entropy_value,
    scalar_ot_exact,
    scalar_sinkhorn,
    solve_mw,
    transport_cost,
)
from spdot.solvers import ArmijoConfig, SolverConfig


def lift(x):
    return np.asarray(x, dtype=float)[..., None, None]


def linprog_ot(p, q, cost):
    m, n = cost.shape
    a_eq = []
    for i in range(m):
        row = np.zeros((m, n))
        row[i, :] = 1
        a_eq.append(row.ravel())
    for j in range(n):
        col = np.zeros((m, n))
        col[:, j] = 1
        a_eq.append(col.ravel())
    res = linprog(cost.ravel(), A_eq=np.array(a_eq), b_eq=np.concatenate([p, q]), method="highs")
    return res.fun


class TestObjective:
    def test_zero_cost_zero_eps(self):
        rng = np.random.default_rng(0)
        blocks = np.broadcast_to(np.eye(2) / 6.0, (2, 3, 2, 2)).copy()
        problem = RegularizedProblem(CostField(np.zeros((2, 3, 2, 2))), 0.0, "none")
        assert mw_objective(problem, blocks) == 0.0
        assert np.allclose(mw_euclidean_gradient(problem, blocks), 0.0)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        c = rng.standard_normal((2, 2, 3, 3))
        cost = CostField(c @ np.swapaxes(c, -1, -2))
        blocks = np.broadcast_to(np.eye(3) / 4.0, (2, 2, 3, 3)).copy()
        problem = RegularizedProblem(cost, 0.0, "none")
        expected = sum(np.trace(cost.blocks[i, j]) / 4.0 for i in range(2) for j in range(2))
        assert np.isclose(mw_objective(problem, blocks), expected)

    def test_d1_entropic_gradient(self):
        rng = np.random.default_rng(2)
        g = rng.uniform(0.05, 0.5, size=(3, 4))
        c = rng.uniform(0.0, 1.0, size=(3, 4))
        eps = 0.2
        problem = RegularizedProblem(CostField(lift(c)), eps, "quantum_entropy")
        grad = mw_euclidean_gradient(problem, lift(g))
        assert np.allclose(grad[..., 0, 0], c + eps * np.log(g), atol=1e-12)

    def test_entropy_gradient_finite_differences(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((3, 3))
        blocks = (a @ a.T + 0.5 * np.eye(3))[None, None]
        problem = RegularizedProblem(CostField(np.zeros((1, 1, 3, 3))), 1.0, "quantum_entropy")
        grad = mw_euclidean_gradient(problem, blocks)
        h = 1e-6
        for _ in range(5):
            u = linalg.sym_part(rng.standard_normal((3, 3)))[None, None]
            fd = (
                mw_objective(problem, blocks + h * u) - mw_objective(problem, blocks - h * u)
            ) / (2 * h)
            analytic = float(np.einsum("ijab,ijba->", grad, u))
            assert abs(fd - analytic) / max(1.0, abs(analytic)) < 1e-6

    def test_quantum_entropy_zero_eigenvalue_convention(self):
        blocks = np.diag([1.0, 0.0])[None, None]
        assert np.isclose(quantum_entropy_value(blocks), 1.0 * np.log(1.0) - 1.0)


class TestCostBuilders:
    def test_matched_samples_zero_diagonal(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((4, 3, 3))
        c = cost_outer_difference(x, x)
        for i in range(4):
            assert np.allclose(c.blocks[i, i], 0.0, atol=1e-14)

    def test_d1_all_kinds_reduce_to_squared_distance(self):
        x = np.array([[0.0], [1.0]])
        y = np.array([[0.5]])
        d2 = np.array([[0.25], [0.25]])
        for kind, kw in [
            ("scaled_identity", dict(x=x, y=y, d=1)),
            ("outer_difference", dict(x=x, y=y)),
            ("grid_sq_euclidean", dict(x_pos=x, y_pos=y, d=1)),
        ]:
            c = build_cost(kind, **kw)
            assert np.allclose(c.blocks[..., 0, 0], d2)

    def test_psd_check_random(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((3, 2, 4))
        y = rng.standard_normal((5, 2, 4))
        c = cost_outer_difference(x, y)
        w = np.linalg.eigvalsh(c.blocks)
        assert np.all(w >= -1e-12)

    def test_full_rank_differences_yield_pd(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((2, 3, 5))
        y = rng.standard_normal((2, 3, 5))
        c = cost_outer_difference(x, y)
        assert np.all(np.linalg.eigvalsh(c.blocks)[..., 0] > 0)

    def test_indefinite_rejected(self):
        with pytest.raises(InvalidInput):
            CostField(np.diag([1.0, -1.0])[None, None])

    def test_unknown_kind(self):
        with pytest.raises(InvalidInput):
            build_cost("nope")


class TestScalarExact:
    def test_single_cell(self):
        flow, val = scalar_ot_exact([1.0], [1.0], [[3.5]])
        assert flow[0, 0] == 1.0 and val == 3.5

    def test_sorted_1d_identity_coupling(self):
        # sorted points with uniform marginals transport monotonically
        x = np.sort(np.random.default_rng(7).uniform(0, 1, 5))
        y = np.sort(np.random.default_rng(8).uniform(0, 1, 5))
        cost = (x[:, None] - y[None, :]) ** 2
        p = np.full(5, 0.2)
        flow, _ = scalar_ot_exact(p, p, cost)
        assert np.allclose(flow, np.diag(p), atol=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_linprog(self, seed):
        rng = np.random.default_rng(seed)
        m, n = 4, 5
        p = rng.uniform(0.2, 1.0, m); p /= p.sum()
        q = rng.uniform(0.2, 1.0, n); q /= q.sum()
        cost = rng.uniform(0.0, 1.0, (m, n))
        flow, val = scalar_ot_exact(p, q, cost)
        assert np.allclose(flow.sum(axis=1), p, atol=1e-12)
        assert np.allclose(flow.sum(axis=0), q, atol=1e-12)
        assert abs(val - linprog_ot(p, q, cost)) < 1e-10

    def test_degenerate_marginals(self):
        # ties in the northwest-corner path exercise the zero-flow basic cells
        p = np.array([0.5, 0.5])
        q = np.array([0.5, 0.5])
        cost = np.array([[1.0, 2.0], [2.0, 1.0]])
        flow, val = scalar_ot_exact(p, q, cost)
        assert np.isclose(val, 1.0)


class TestScalarSinkhorn:
    def test_zero_cost_product_coupling(self):
        p = np.array([0.3, 0.7])
        q = np.array([0.5, 0.25, 0.25])
        gamma = scalar_sinkhorn(p, q, np.zeros((2, 3)), 1.0)
        assert np.allclose(gamma, np.outer(p, q), atol=1e-12)

    def test_large_epsilon_limit(self):
        rng = np.random.default_rng(9)
        p = np.array([0.4, 0.6]); q = np.array([0.2, 0.8])
        cost = rng.uniform(0, 1, (2, 2))
        gamma = scalar_sinkhorn(p, q, cost, 1e6)
        assert np.allclose(gamma, np.outer(p, q), atol=1e-6)

    def test_marginal_residuals(self):
        rng = np.random.default_rng(10)
        p = rng.uniform(0.2, 1.0, 5); p /= p.sum()
        q = rng.uniform(0.2, 1.0, 4); q /= q.sum()
        gamma = scalar_sinkhorn(p, q, rng.uniform(0, 1, (5, 4)), 0.1)
        assert np.max(np.abs(gamma.sum(axis=1) - p)) < 1e-12
        assert np.max(np.abs(gamma.sum(axis=0) - q)) < 1e-12


class TestSolveMw:
    def test_identical_marginals_concentrate_on_diagonal(self):
        # zero diagonal cost, PD off-diagonal: mass concentrates on i = j
        rng = np.random.default_rng(11)
        n, d = 3, 2
        x = rng.uniform(0, 1, (n, 2))
        cost = cost_scaled_identity(x, x, d)
        p = rng.uniform(0.5, 1.5, n); p /= p.sum()
        pm = BlockMarginal.lifted(p, d)
        problem = RegularizedProblem(cost, 1e-3, "quantum_entropy")
        res = solve_mw(pm, pm, problem, SolverConfig(max_iter=3000, grad_tol=1e-9), continuation=True)
        off_trace = sum(
            np.trace(res.coupling.blocks[i, j]) for i in range(n) for j in range(n) if i != j
        )
        assert off_trace < 1e-3
        assert res.transport_cost < 1e-3

    def test_d1_entropic_matches_sinkhorn(self):
        rng = np.random.default_rng(12)
        m, n, eps = 4, 5, 0.4
        p = rng.uniform(0.5, 1.5, m); p /= p.sum()
        q = rng.uniform(0.5, 1.5, n); q /= q.sum()
        c = rng.uniform(0, 1, (m, n))
        problem = RegularizedProblem(CostField(lift(c)), eps, "quantum_entropy")
        res = solve_mw(
            BlockMarginal.lifted(p, 1), BlockMarginal.lifted(q, 1), problem,
            SolverConfig(max_iter=3000, grad_tol=1e-10),
        )
        ref = scalar_sinkhorn(p, q, c, eps)
        assert np.max(np.abs(res.coupling.blocks[..., 0, 0] - ref)) < 1e-6

    def test_scaled_identity_blocks_stay_isotropic(self):
        # lifted marginals and C_ij = c_ij I keep blocks multiples of I
        rng = np.random.default_rng(13)
        m, n, d = 3, 3, 2
        x = rng.uniform(0, 1, (m, 2)); y = rng.uniform(0, 1, (n, 2))
        cost = cost_scaled_identity(x, y, d)
        p = rng.uniform(0.5, 1.5, m); p /= p.sum()
        q = rng.uniform(0.5, 1.5, n); q /= q.sum()
        problem = RegularizedProblem(cost, 0.1, "quantum_entropy")
        res = solve_mw(
            BlockMarginal.lifted(p, d), BlockMarginal.lifted(q, d), problem,
            SolverConfig(max_iter=2000, grad_tol=1e-9),
        )
        blocks = res.coupling.blocks
        iso = np.trace(blocks, axis1=-2, axis2=-1)[..., None, None] / d * np.eye(d)
        assert np.max(np.abs(blocks - iso)) < 1e-8

    def test_scaled_identity_equals_d_times_w2(self):
        # for scaled-identity costs the optimum is the Kronecker lift:
        # MW^2 = d * W2^2
        rng = np.random.default_rng(14)
        m, n, d = 4, 4, 2
        x = rng.uniform(0, 1, (m, 2)); y = rng.uniform(0, 1, (n, 2))
        cost = cost_scaled_identity(x, y, d)
        p = rng.uniform(0.5, 1.5, m); p /= p.sum()
        q = rng.uniform(0.5, 1.5, n); q /= q.sum()
        scalar_cost = np.trace(cost.blocks, axis1=-2, axis2=-1) / d
        w2 = scalar_ot_exact(p, q, scalar_cost)[1]
        problem = RegularizedProblem(cost, 1e-3, "quantum_entropy")
        res = solve_mw(
            BlockMarginal.lifted(p, d), BlockMarginal.lifted(q, d), problem,
            SolverConfig(max_iter=4000, grad_tol=1e-9), continuation=True,
        )
        assert abs(res.transport_cost - d * w2) / (d * w2) < 0.02

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(15)
        m, n, d = 3, 3, 2
        x = rng.uniform(0, 1, (m, 2)); y = rng.uniform(0, 1, (n, 2))
        cost = cost_scaled_identity(x, y, d)
        p = rng.uniform(0.5, 1.5, m); p /= p.sum()
        q = rng.uniform(0.5, 1.5, n); q /= q.sum()
        problem = RegularizedProblem(cost, 0.2, "quantum_entropy")
        cfg = SolverConfig(max_iter=2000, grad_tol=1e-10)
        res = solve_mw(BlockMarginal.lifted(p, d), BlockMarginal.lifted(q, d), problem, cfg)
        perm = [2, 0, 1]
        problem_p = RegularizedProblem(CostField(cost.blocks[perm]), 0.2, "quantum_entropy")
        res_p = solve_mw(
            BlockMarginal.lifted(p[perm], d), BlockMarginal.lifted(q, d), problem_p, cfg
        )
        assert abs(res.value - res_p.value) < 1e-8 * max(1.0, abs(res.value))
        assert np.max(np.abs(res.coupling.blocks[perm] - res_p.coupling.blocks)) < 1e-6


class TestMetricAxioms:
    def test_scaled_identity_costs_pass(self):
        rng = np.random.default_rng(16)
        n, d = 3, 2
        x = rng.uniform(0, 1, (n, 2))
        cost = cost_scaled_identity(x, x, d)
        report = check_metric_axioms(
            cost, trials=20, epsilon=1e-3, rng=np.random.default_rng(0),
            config=SolverConfig(
                max_iter=2500, grad_tol=1e-9,
                armijo=ArmijoConfig(max_step_length=50.0),
            ),
            triangle_triples=3, pool_size=3, symmetry_pairs=1, self_checks=1,
        )
        assert report.cost_conditions_ok
        assert report.empirical_run
        assert report.mw_symmetry_max_rel < 1e-4
        assert report.mw_self_max < 1e-2
        assert report.mw_triangle_min_slack > -1e-6

    def test_nonzero_diagonal_reported(self):
        c = np.broadcast_to(np.eye(2), (3, 3, 2, 2)).copy()
        report = check_metric_axioms(CostField(c), trials=3)
        assert not report.cost_diagonal_zero
        assert not report.empirical_run

    def test_outer_difference_trace_triangle(self):
        # full-rank matrix samples: triangle of sqrt(tr(C A)) holds on PSD A
        rng = np.random.default_rng(17)
        x = rng.standard_normal((4, 2, 3))
        cost = cost_outer_difference(x, x)
        report = check_metric_axioms(CostField(cost.blocks), trials=100)
        assert report.trace_triangle_min_margin >= -1e-10

    def test_rectangular_rejected(self):
        with pytest.raises(InvalidInput):
            check_metric_axioms(CostField(np.zeros((2, 3, 2, 2))))
