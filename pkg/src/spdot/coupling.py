"""The block-SPD coupling manifold and its balancing routines.

Points are grids ``(m, n, d, d)`` of SPD blocks whose row block sums equal a
prescribed marginal ``P`` and column block sums equal ``Q``.  Tangent vectors
are symmetric block grids with vanishing row and column block sums.  Each
block carries the affine-invariant SPD metric, summed across the grid.

The module also ships the trace-constrained relaxation, where only row and
column sums of block traces are matched to scalar marginals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .blocks import BlockMarginal, Coupling, feasibility_gap
from .errors import (
    FeasibilityUnknown,
    InvalidInput,
    NotConverged,
    ProjectionFailed,
)


@dataclass
class BalanceReport:
    """Per-iteration constraint gaps of a balancing run."""

    iterations: int
    gaps: list[float] = field(default_factory=list)
    converged: bool = True
    tol: float = 1e-10

    @property
    def final_gap(self) -> float:
        return self.gaps[-1] if self.gaps else np.inf


def _marginal_gap(blocks: np.ndarray, pb: np.ndarray, qb: np.ndarray) -> float:
    row = np.max(linalg.frob(blocks.sum(axis=1) - pb) / linalg.frob(pb))
    col = np.max(linalg.frob(blocks.sum(axis=0) - qb) / linalg.frob(qb))
    return float(max(row, col))


def _mbalance_raw(a, pb, qb, tol=1e-10, max_iter=1000):
    """Alternating symmetric Riccati scaling of columns then rows.

    Column step: find SPD ``R_j`` with ``R_j (sum_i B_ij) R_j = Q_j`` and
    congruence-scale column j by it; row step mirrors with ``P_i``.  Returns
    the balanced blocks and a report; raises NotConverged past ``max_iter``.
    """
    b = np.array(a, dtype=float)
    gaps = []
    for it in range(max_iter + 1):
        gap = _marginal_gap(b, pb, qb)
        gaps.append(gap)
        if gap <= tol:
            return b, BalanceReport(iterations=it, gaps=gaps, converged=True, tol=tol)
        if it == max_iter:
            break
        r = linalg.riccati_solve(b.sum(axis=0), qb)  # (n, d, d)
        b = linalg.sym_part(r[None, :] @ b @ r[None, :])
        left = linalg.riccati_solve(b.sum(axis=1), pb)  # (m, d, d)
        b = linalg.sym_part(left[:, None] @ b @ left[:, None])
    raise NotConverged(max_iter, gaps[-1])


def mbalance(a, p: BlockMarginal, q: BlockMarginal, tol: float = 1e-10, max_iter: int = 1000):
    """Balance SPD blocks ``a`` to the marginals, returning (Coupling, report).

    Non-convergence raises :class:`NotConverged`; callers treat that as
    evidence the marginal pair is (near-)infeasible.
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (p.n, q.n, p.d, p.d):
        raise InvalidInput(f"blocks {a.shape} do not match marginals ({p.n}, {q.n}, {p.d})")
    mass_gap = np.linalg.norm(p.total_mass - q.total_mass) / np.linalg.norm(p.total_mass)
    if mass_gap > 1e-10:
        raise InvalidInput(f"marginals disagree on total mass by {mass_gap:.3e}")
    blocks, report = _mbalance_raw(a, p.blocks, q.blocks, tol=tol, max_iter=max_iter)
    coupling = Coupling(blocks, p, q, feas_tol=max(1e-8, 2.0 * tol))
    return coupling, report


class BlockCouplingManifold:
    """Riemannian geometry of block-SPD couplings with fixed marginals.

    Method signatures follow the usual manifold-toolbox shape: points and
    tangent vectors are raw ``(m, n, d, d)`` arrays, the marginals live on
    the manifold object.
    """

    def __init__(
        self,
        p: BlockMarginal,
        q: BlockMarginal,
        feas_tol: float = 1e-8,
        balance_tol: float = 1e-10,
        balance_max_iter: int = 1000,
        cond_limit: float = 1e15,
    ):
        if p.d != q.d:
            raise InvalidInput("marginals have different block size")
        self.p = p
        self.q = q
        self.m, self.n, self.d = p.n, q.n, p.d
        self.feas_tol = feas_tol
        self.balance_tol = balance_tol
        self.balance_max_iter = balance_max_iter
        self.cond_limit = cond_limit
        self._basis = linalg.svec_basis(self.d)
        # cumulative counters read by the solver for its report
        self.stats = {"balance_iterations": 0}

    @property
    def dim(self) -> int:
        return (self.m - 1) * (self.n - 1) * self.d * (self.d + 1) // 2

    # -- basic tensors ----------------------------------------------------

    def _check_shape(self, *arrays):
        for arr in arrays:
            if np.shape(arr) != (self.m, self.n, self.d, self.d):
                raise InvalidInput(
                    f"expected shape {(self.m, self.n, self.d, self.d)}, got {np.shape(arr)}"
                )

    def metric(self, x, u, v) -> float:
        """Affine-invariant inner product summed over blocks."""
        self._check_shape(x, u, v)
        ix = linalg.spd_inv(x)
        return float(np.einsum("ijab,ijbc,ijcd,ijda->", ix, u, ix, v))

    def norm(self, x, u) -> float:
        return float(np.sqrt(max(self.metric(x, u, u), 0.0)))

    # -- tangent projection ------------------------------------------------

    def project_with_duals(self, x, s):
        """Project symmetric blocks onto the tangent space at ``x``.

        Returns ``(u, lam, theta)`` with ``u_ij = s_ij + x_ij (lam_i +
        theta_j) x_ij`` tangent, and the multipliers in the minimum-norm
        gauge.  The multiplier system is assembled in svec coordinates and
        solved as a minimum-norm least-squares problem (the system carries
        the gauge kernel ``(lam + D, theta - D)``).
        """
        self._check_shape(x, s)
        s = linalg.sym_part(np.asarray(s, dtype=float))
        m, n, k = self.m, self.n, self.d * (self.d + 1) // 2
        g = linalg.congruence_operator(x, self._basis)  # (m, n, k, k)

        mat = np.zeros(((m + n) * k, (m + n) * k))
        for i in range(m):
            rows = slice(i * k, (i + 1) * k)
            mat[rows, rows] = g[i].sum(axis=0)
            for j in range(n):
                cols = slice((m + j) * k, (m + j + 1) * k)
                mat[rows, cols] = g[i, j]
        for j in range(n):
            rows = slice((m + j) * k, (m + j + 1) * k)
            mat[rows, rows] = g[:, j].sum(axis=0)
            for i in range(m):
                cols = slice(i * k, (i + 1) * k)
                mat[rows, cols] = g[i, j]

        rhs = np.concatenate(
            [
                -linalg.svec(s.sum(axis=1), self._basis).ravel(),
                -linalg.svec(s.sum(axis=0), self._basis).ravel(),
            ]
        )
        sol, _, rank, sing = np.linalg.lstsq(mat, rhs, rcond=None)
        cond = float(sing[0] / sing[rank - 1]) if rank > 0 else np.inf
        if cond > self.cond_limit:
            raise ProjectionFailed(cond)

        lam = linalg.smat(sol[: m * k].reshape(m, k), self._basis)
        theta = linalg.smat(sol[m * k :].reshape(n, k), self._basis)
        u = s + x @ (lam[:, None] + theta[None, :]) @ x
        u = linalg.sym_part(u)

        resid = max(
            np.max(linalg.frob(u.sum(axis=1))),
            np.max(linalg.frob(u.sum(axis=0))),
        )
        if resid > 1e-7 * max(1.0, float(linalg.frob(s, axis=None))):
            raise ProjectionFailed(cond, f"tangency residual {resid:.3e} after projection")
        return u, lam, theta

    def project(self, x, s):
        return self.project_with_duals(x, s)[0]

    def check_tangent(self, x, u, tol: float = 1e-9) -> bool:
        scale = max(1.0, float(linalg.frob(u, axis=None)))
        return (
            np.max(linalg.frob(np.sum(u, axis=1))) <= tol * scale
            and np.max(linalg.frob(np.sum(u, axis=0))) <= tol * scale
        )

    # -- gradients and Hessians ---------------------------------------------

    def egrad2rgrad(self, x, egrad):
        """Riemannian gradient from blockwise Euclidean partial derivatives."""
        eg = linalg.sym_part(egrad)
        return self.project(x, x @ eg @ x)

    def ehess2rhess(self, x, egrad, ehess, u):
        """Riemannian Hessian along ``u``.

        ``ehess`` is the Euclidean directional derivative of the gradient
        field along ``u``.  The Riemannian gradient field has blocks
        ``x (W) x`` with ``W = {egrad}_S + lam_i + theta_j``; its covariant
        derivative along ``u`` under the blockwise affine-invariant
        connection is ``{u W x}_S + x {ehess}_S x`` plus a normal-space term
        (from the multiplier derivatives) that the final projection kills.
        """
        eg = linalg.sym_part(egrad)
        eh = linalg.sym_part(ehess)
        _, lam, theta = self.project_with_duals(x, x @ eg @ x)
        w = eg + lam[:, None] + theta[None, :]
        mixed = u @ w @ x
        ambient = 0.5 * (mixed + np.swapaxes(mixed, -1, -2)) + x @ eh @ x
        return self.project(x, ambient)

    # -- retraction and feasibility -----------------------------------------

    def retract(self, x, u, tol: float | None = None, max_iter: int | None = None):
        """Exponential step on each block followed by re-balancing.

        Computes ``x^{1/2} exp(x^{-1/2} u x^{-1/2}) x^{1/2}`` per block (the
        symmetric form of ``x exp(x^{-1} u)``), then runs the balancing
        sweep.  A zero step returns ``x`` unchanged.
        """
        self._check_shape(x, u)
        if not np.any(u):
            return np.array(x)
        rx, rxi = linalg.sqrt_and_inv_sqrt(x)
        inner = linalg.sym_exp(linalg.sym_part(rxi @ u @ rxi))
        a = linalg.sym_part(rx @ inner @ rx)
        blocks, report = _mbalance_raw(
            a,
            self.p.blocks,
            self.q.blocks,
            tol=self.balance_tol if tol is None else tol,
            max_iter=self.balance_max_iter if max_iter is None else max_iter,
        )
        self.stats["balance_iterations"] += report.iterations
        # Blocks drifting toward the boundary are clamped at the relative
        # eigenvalue floor (grid-wide scale) so downstream inversions and
        # logarithms stay finite; the marginal perturbation is below tol.
        if self.d == 1:
            floor = linalg.SPD_FLOOR * blocks.max()
            if blocks.min() < floor:
                blocks = np.maximum(blocks, floor)
        else:
            w = np.linalg.eigvalsh(blocks)
            floor = linalg.SPD_FLOOR * w.max()
            if w.min() < floor:
                w, v = np.linalg.eigh(blocks)
                w = np.maximum(w, floor)
                blocks = linalg.sym_part(np.einsum("ijab,ijb,ijcb->ijac", v, w, v))
        return blocks

    def initial_point(self):
        """Canonical feasible point: balance the seed ``P_i^{1/2} Q_j P_i^{1/2}``.

        Raises :class:`FeasibilityUnknown` when balancing does not converge.
        """
        rp = linalg.spd_fn(self.p.blocks, "sqrt")
        seed = linalg.sym_part(rp[:, None] @ self.q.blocks[None, :] @ rp[:, None])
        try:
            blocks, _ = _mbalance_raw(
                seed, self.p.blocks, self.q.blocks, self.balance_tol, self.balance_max_iter
            )
        except NotConverged as err:
            raise FeasibilityUnknown(
                f"balancing the canonical seed stalled at gap {err.final_gap:.3e}"
            ) from err
        return blocks

    def random_tangent(self, x, rng: np.random.Generator):
        """Random unit-Frobenius tangent vector at ``x``."""
        s = linalg.sym_part(rng.standard_normal((self.m, self.n, self.d, self.d)))
        u = self.project(x, s)
        return u / linalg.frob(u, axis=None)

    def check_point(self, x, tol: float | None = None) -> bool:
        if not linalg.is_spd(x):
            return False
        return _marginal_gap(x, self.p.blocks, self.q.blocks) <= (tol or self.feas_tol)

    def feasibility_residual(self, x) -> float:
        return _marginal_gap(x, self.p.blocks, self.q.blocks)

    def coupling(self, x) -> Coupling:
        return Coupling(x, self.p, self.q, feas_tol=self.feas_tol)


# -- trace-constrained relaxation -------------------------------------------


def ras_balance(kernel: np.ndarray, p, q, tol: float = 1e-12, max_iter: int = 10000):
    """Classic RAS/Sinkhorn scaling of a positive matrix to given marginals.

    Returns the scaled matrix with row sums ``p`` and column sums ``q``.
    """
    kernel = np.asarray(kernel, dtype=float)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(kernel <= 0):
        raise InvalidInput("RAS balancing expects strictly positive entries")
    if not np.isclose(p.sum(), q.sum()):
        raise InvalidInput("marginal sums disagree")
    u = np.ones_like(p)
    v = np.ones_like(q)
    for it in range(max_iter):
        u = p / (kernel @ v)
        v = q / (kernel.T @ u)
        b = u[:, None] * kernel * v[None, :]
        gap = max(
            np.max(np.abs(b.sum(axis=1) - p)) / np.max(p),
            np.max(np.abs(b.sum(axis=0) - q)) / np.max(q),
        )
        if gap <= tol:
            return b, it + 1
    raise NotConverged(max_iter, gap)


def trbalance(a: np.ndarray, p_weights, q_weights, tol: float = 1e-12, max_iter: int = 10000):
    """Scale SPD blocks so row/column sums of block traces match ``p``/``q``.

    Runs scalar RAS on the trace matrix ``tr(A_ij)`` and rescales each block
    by the ratio of balanced to original trace.
    """
    a = np.asarray(a, dtype=float)
    traces = np.trace(a, axis1=-2, axis2=-1)
    balanced, _ = ras_balance(traces, p_weights, q_weights, tol=tol, max_iter=max_iter)
    return a * (balanced / traces)[..., None, None]


class TraceCouplingManifold:
    """Couplings constrained only through block traces.

    Row sums of ``tr(Gamma_ij)`` match ``p`` and column sums match ``q``;
    tangent vectors have trace-sum-free rows and columns.  The metric is the
    same blockwise affine-invariant one as on the full manifold.
    """

    def __init__(self, p_weights, q_weights, d: int, balance_tol: float = 1e-12, balance_max_iter: int = 10000):
        self.p = np.asarray(p_weights, dtype=float)
        self.q = np.asarray(q_weights, dtype=float)
        if np.any(self.p <= 0) or np.any(self.q <= 0):
            raise InvalidInput("trace marginals must be positive")
        if not np.isclose(self.p.sum(), self.q.sum()):
            raise InvalidInput("trace marginal sums disagree")
        self.m, self.n, self.d = self.p.size, self.q.size, d
        self.balance_tol = balance_tol
        self.balance_max_iter = balance_max_iter

    def _check_shape(self, *arrays):
        for arr in arrays:
            if np.shape(arr) != (self.m, self.n, self.d, self.d):
                raise InvalidInput(
                    f"expected shape {(self.m, self.n, self.d, self.d)}, got {np.shape(arr)}"
                )

    def metric(self, x, u, v) -> float:
        self._check_shape(x, u, v)
        ix = linalg.spd_inv(x)
        return float(np.einsum("ijab,ijbc,ijcd,ijda->", ix, u, ix, v))

    def norm(self, x, u) -> float:
        return float(np.sqrt(max(self.metric(x, u, u), 0.0)))

    def project_with_duals(self, x, s):
        """Tangent projection ``u_ij = s_ij + (lam_i + theta_j) x_ij^2``."""
        self._check_shape(x, s)
        s = linalg.sym_part(np.asarray(s, dtype=float))
        w = np.trace(x @ x, axis1=-2, axis2=-1)  # tr(Gamma^2), (m, n)
        m, n = self.m, self.n
        mat = np.zeros((m + n, m + n))
        mat[:m, :m] = np.diag(w.sum(axis=1))
        mat[:m, m:] = w
        mat[m:, :m] = w.T
        mat[m:, m:] = np.diag(w.sum(axis=0))
        str_ = np.trace(s, axis1=-2, axis2=-1)
        rhs = np.concatenate([-str_.sum(axis=1), -str_.sum(axis=0)])
        sol, _, _, _ = np.linalg.lstsq(mat, rhs, rcond=None)
        lam, theta = sol[:m], sol[m:]
        u = s + (lam[:, None] + theta[None, :])[..., None, None] * (x @ x)
        return linalg.sym_part(u), lam, theta

    def project(self, x, s):
        return self.project_with_duals(x, s)[0]

    def check_tangent(self, x, u, tol: float = 1e-9) -> bool:
        tr = np.trace(u, axis1=-2, axis2=-1)
        scale = max(1.0, float(linalg.frob(u, axis=None)))
        return np.max(np.abs(tr.sum(axis=1))) <= tol * scale and np.max(np.abs(tr.sum(axis=0))) <= tol * scale

    def egrad2rgrad(self, x, egrad):
        eg = linalg.sym_part(egrad)
        return self.project(x, x @ eg @ x)

    def retract(self, x, u):
        self._check_shape(x, u)
        if not np.any(u):
            return np.array(x)
        rx, rxi = linalg.sqrt_and_inv_sqrt(x)
        a = linalg.sym_part(rx @ linalg.sym_exp(linalg.sym_part(rxi @ u @ rxi)) @ rx)
        return trbalance(a, self.p, self.q, tol=self.balance_tol, max_iter=self.balance_max_iter)

    def initial_point(self):
        seed = (self.p[:, None] * self.q[None, :])[..., None, None] * (np.eye(self.d) / self.d)
        return trbalance(seed, self.p, self.q, tol=self.balance_tol, max_iter=self.balance_max_iter)

    def random_tangent(self, x, rng: np.random.Generator):
        s = linalg.sym_part(rng.standard_normal((self.m, self.n, self.d, self.d)))
        u = self.project(x, s)
        return u / linalg.frob(u, axis=None)

    def check_point(self, x, tol: float = 1e-8) -> bool:
        if not linalg.is_spd(x):
            return False
        return self.feasibility_residual(x) <= tol

    def feasibility_residual(self, x) -> float:
        tr = np.trace(x, axis1=-2, axis2=-1)
        return float(
            max(
                np.max(np.abs(tr.sum(axis=1) - self.p)) / np.max(self.p),
                np.max(np.abs(tr.sum(axis=0) - self.q)) / np.max(self.q),
            )
        )
