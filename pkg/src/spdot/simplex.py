"""Riemannian geometry of the simplex of SPD matrices.

Points are stacks ``(n, d, d)`` of SPD blocks summing to the identity;
tangent vectors are symmetric stacks summing to zero.  Each block carries the
affine-invariant metric.  This is the search space for transport barycenters.
"""

from __future__ import annotations

import numpy as np

from . import linalg
from .errors import InvalidInput, NotPositiveDefinite, ProjectionFailed


class SpdSimplex:
    """Blocks ``P_1..P_n`` in S++^d with ``sum_i P_i = I``."""

    def __init__(self, n: int, d: int):
        if n < 1 or d < 1:
            raise InvalidInput("n and d must be positive")
        self.n = n
        self.d = d
        self._basis = linalg.svec_basis(d)

    @property
    def dim(self) -> int:
        return (self.n - 1) * self.d * (self.d + 1) // 2

    def _check_shape(self, *arrays):
        for arr in arrays:
            if np.shape(arr) != (self.n, self.d, self.d):
                raise InvalidInput(f"expected shape {(self.n, self.d, self.d)}, got {np.shape(arr)}")

    def metric(self, p, u, v) -> float:
        self._check_shape(p, u, v)
        ip = linalg.spd_inv(p)
        return float(np.einsum("iab,ibc,icd,ida->", ip, u, ip, v))

    def norm(self, p, u) -> float:
        return float(np.sqrt(max(self.metric(p, u, u), 0.0)))

    def project(self, p, s):
        """Tangent projection ``u_i = s_i + p_i L p_i`` with a single
        symmetric multiplier solved from ``sum_i p_i L p_i = -sum_i s_i``."""
        self._check_shape(p, s)
        s = linalg.sym_part(np.asarray(s, dtype=float))
        if self.n == 1:
            return np.zeros_like(s)
        ops = linalg.congruence_operator(p, self._basis)  # (n, k, k)
        mat = ops.sum(axis=0)
        rhs = -linalg.svec(s.sum(axis=0), self._basis)
        try:
            sol = np.linalg.solve(mat, rhs)
        except np.linalg.LinAlgError as err:
            raise ProjectionFailed(np.inf, str(err)) from err
        lam = linalg.smat(sol, self._basis)
        return linalg.sym_part(s + p @ lam @ p)

    def check_tangent(self, p, u, tol: float = 1e-9) -> bool:
        scale = max(1.0, float(linalg.frob(u, axis=None)))
        return float(np.linalg.norm(np.sum(u, axis=0))) <= tol * scale

    def egrad2rgrad(self, p, egrad):
        eg = linalg.sym_part(egrad)
        return self.project(p, p @ eg @ p)

    def retract(self, p, u):
        """Blockwise exponential update followed by congruence normalization.

        ``P^_i = p_i^{1/2} exp(p_i^{-1/2} u_i p_i^{-1/2}) p_i^{1/2}``, then
        each block is congruence-scaled by the inverse square root of the
        total so the result sums to the identity again.
        """
        self._check_shape(p, u)
        if not np.any(u):
            return np.array(p)
        rp, rpi = linalg.sqrt_and_inv_sqrt(p)
        hat = linalg.sym_part(rp @ linalg.sym_exp(linalg.sym_part(rpi @ u @ rpi)) @ rp)
        total = hat.sum(axis=0)
        w = np.linalg.eigvalsh(total)
        if w[0] <= linalg.SPD_FLOOR * max(w[-1], 0.0):
            raise NotPositiveDefinite("degenerate block sum in simplex retraction")
        ti = linalg.spd_fn(total, "inv_sqrt")
        return linalg.sym_part(ti @ hat @ ti)

    def uniform_point(self):
        return np.broadcast_to(np.eye(self.d) / self.n, (self.n, self.d, self.d)).copy()

    def random_point(self, rng: np.random.Generator):
        a = rng.standard_normal((self.n, self.d, self.d))
        blocks = a @ np.swapaxes(a, -1, -2) + 0.5 * np.eye(self.d)
        ti = linalg.spd_fn(blocks.sum(axis=0), "inv_sqrt")
        return linalg.sym_part(ti @ blocks @ ti)

    def random_tangent(self, p, rng: np.random.Generator):
        if self.n == 1:
            return np.zeros((1, self.d, self.d))
        u = self.project(p, linalg.sym_part(rng.standard_normal((self.n, self.d, self.d))))
        return u / linalg.frob(u, axis=None)

    def check_point(self, p, tol: float = 1e-10) -> bool:
        if not linalg.is_spd(p):
            return False
        return self.feasibility_residual(p) <= tol

    def feasibility_residual(self, p) -> float:
        return float(np.linalg.norm(p.sum(axis=0) - np.eye(self.d)) / np.sqrt(self.d))
