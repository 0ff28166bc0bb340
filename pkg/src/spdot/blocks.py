"""Block containers: marginals and couplings of SPD blocks.

Block grids are plain arrays of shape ``(m, n, d, d)`` and block marginals
are arrays of shape ``(n, d, d)``; the dataclasses below wrap them where an
invariant has to hold (marginal mass, coupling feasibility).  Tangent
vectors stay raw arrays throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import InvalidInput, NotPositiveDefinite


@dataclass(frozen=True)
class BlockMarginal:
    """An ordered list of SPD blocks with a prescribed total mass.

    ``blocks`` has shape ``(n, d, d)``; the blocks must sum to ``total_mass``
    (identity by default) within ``mass_tol`` relative Frobenius error.
    """

    blocks: np.ndarray
    total_mass: np.ndarray = None  # type: ignore[assignment]
    mass_tol: float = 1e-10

    def __post_init__(self):
        blocks = np.asarray(self.blocks, dtype=float)
        if blocks.ndim != 3 or blocks.shape[-1] != blocks.shape[-2]:
            raise InvalidInput(f"expected (n, d, d) blocks, got {blocks.shape}")
        object.__setattr__(self, "blocks", linalg.spd(blocks))
        mass = self.total_mass
        if mass is None:
            mass = np.eye(blocks.shape[-1])
        mass = linalg.spd(mass)
        object.__setattr__(self, "total_mass", mass)
        gap = np.linalg.norm(blocks.sum(axis=0) - mass) / np.linalg.norm(mass)
        if gap > self.mass_tol:
            raise InvalidInput(f"blocks sum off total mass by {gap:.3e} (tol {self.mass_tol:g})")

    @property
    def n(self) -> int:
        return self.blocks.shape[0]

    @property
    def d(self) -> int:
        return self.blocks.shape[-1]

    @staticmethod
    def lifted(weights, d: int) -> "BlockMarginal":
        """Embed a probability vector p as blocks ``p_i * I`` of size d."""
        w = np.asarray(weights, dtype=float)
        if np.any(w <= 0) or not np.isclose(w.sum(), 1.0):
            raise InvalidInput("weights must be positive and sum to 1")
        return BlockMarginal(w[:, None, None] * np.eye(d))


def feasibility_gap(blocks: np.ndarray, p: BlockMarginal, q: BlockMarginal) -> float:
    """Worst relative Frobenius mismatch of row/column block sums."""
    row = blocks.sum(axis=1) - p.blocks
    col = blocks.sum(axis=0) - q.blocks
    row_gap = np.max(linalg.frob(row) / linalg.frob(p.blocks))
    col_gap = np.max(linalg.frob(col) / linalg.frob(q.blocks))
    return float(max(row_gap, col_gap))


@dataclass(frozen=True)
class Coupling:
    """A feasible point of the block-SPD coupling polytope interior.

    ``blocks`` has shape ``(m, n, d, d)``; row block sums match
    ``row_marginal`` and column block sums match ``col_marginal`` within
    ``feas_tol`` relative error, and every block is SPD.
    """

    blocks: np.ndarray
    row_marginal: BlockMarginal
    col_marginal: BlockMarginal
    feas_tol: float = 1e-8

    def __post_init__(self):
        blocks = np.asarray(self.blocks, dtype=float)
        if blocks.ndim != 4:
            raise InvalidInput(f"expected (m, n, d, d) blocks, got {blocks.shape}")
        m, n, d, _ = blocks.shape
        if (m, d) != (self.row_marginal.n, self.row_marginal.d) or (n, d) != (
            self.col_marginal.n,
            self.col_marginal.d,
        ):
            raise InvalidInput("coupling shape does not match marginals")
        if not linalg.is_spd(blocks):
            raise NotPositiveDefinite("coupling has a non-SPD block")
        object.__setattr__(self, "blocks", linalg.sym_part(blocks))
        gap = feasibility_gap(blocks, self.row_marginal, self.col_marginal)
        if gap > self.feas_tol:
            raise InvalidInput(f"marginal residual {gap:.3e} exceeds feas_tol {self.feas_tol:g}")

    @property
    def shape(self):
        return self.blocks.shape

    def feasibility_gap(self) -> float:
        return feasibility_gap(self.blocks, self.row_marginal, self.col_marginal)


def random_spd_blocks(rng: np.random.Generator, shape, d: int, spread: float = 1.0) -> np.ndarray:
    """Random SPD blocks ``A A^T + spread * I`` of the given grid shape."""
    a = rng.standard_normal((*shape, d, d))
    return a @ np.swapaxes(a, -1, -2) + spread * np.eye(d)


def random_marginal(rng: np.random.Generator, n: int, d: int, diagonal: bool = False) -> BlockMarginal:
    """Random element of the SPD simplex (blocks summing to identity)."""
    if diagonal:
        w = rng.uniform(0.5, 1.5, size=(n, d))
        w = w / w.sum(axis=0)
        return BlockMarginal(w[..., None] * np.eye(d))
    blocks = random_spd_blocks(rng, (n,), d, spread=0.5)
    total = blocks.sum(axis=0)
    ti = linalg.spd_inv_sqrt(total)
    return BlockMarginal(linalg.sym_part(ti @ blocks @ ti))


def random_feasible_pair(rng: np.random.Generator, m: int, n: int, d: int):
    """Random coupling blocks plus the (non-diagonal) marginals they satisfy.

    Feasibility holds by construction: the marginals are the row/column sums
    of the generated blocks after normalizing the total mass to identity.
    """
    blocks = random_spd_blocks(rng, (m, n), d, spread=0.3)
    total = blocks.sum(axis=(0, 1))
    ti = linalg.spd_inv_sqrt(total)
    blocks = linalg.sym_part(ti @ blocks @ ti)
    p = BlockMarginal(blocks.sum(axis=1))
    q = BlockMarginal(blocks.sum(axis=0))
    return blocks, p, q
