"""Dense symmetric/SPD matrix primitives.

Everything here operates on plain numpy arrays.  A "symmetric matrix" is an
array of shape ``(..., d, d)`` with ``a == a.swapaxes(-1, -2)``; leading axes
are broadcast, so block grids of shape ``(m, n, d, d)`` go through the same
code path as single matrices.  All matrix functions are eigendecomposition
based: every matrix in this package is symmetric, and the eigenbasis gives
exp/log/sqrt/inv-sqrt uniformly while preserving symmetry exactly.

SPD checks are relative: a matrix counts as positive definite when its
smallest eigenvalue exceeds ``SPD_FLOOR`` times its largest.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInput, NotPositiveDefinite

# Relative eigenvalue floor below which a matrix is treated as not SPD.
SPD_FLOOR = 1e-12

_EIG_FUNCS = {
    "sqrt": np.sqrt,
    "inv_sqrt": lambda w: 1.0 / np.sqrt(w),
    "inv": lambda w: 1.0 / w,
    "exp": np.exp,
    "log": np.log,
}

# Function tags that require strictly positive eigenvalues.
_NEEDS_SPD = {"sqrt", "inv_sqrt", "inv", "log", "power"}


def sym_part(a: np.ndarray) -> np.ndarray:
    """Symmetric part ``(a + a^T) / 2`` over the trailing two axes."""
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def sym(entries) -> np.ndarray:
    """Construct a symmetric matrix (stack), symmetrizing the input.

    Raises
    ------
    InvalidInput
        If the input is non-square or contains non-finite entries.
    """
    a = np.asarray(entries, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise InvalidInput(f"expected square trailing axes, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("non-finite entries")
    return sym_part(a)


def spd(entries, floor: float = SPD_FLOOR) -> np.ndarray:
    """Construct an SPD matrix (stack): symmetrize, then verify definiteness.

    Raises
    ------
    NotPositiveDefinite
        If any matrix has smallest eigenvalue <= ``floor`` times its largest.
    """
    a = sym(entries)
    w = np.linalg.eigvalsh(a)
    lo, hi = w[..., 0], w[..., -1]
    if np.any(lo <= floor * np.maximum(hi, 0.0)) or np.any(hi <= 0.0):
        raise NotPositiveDefinite(
            f"eigenvalue range [{lo.min():.3e}, {hi.max():.3e}] fails relative floor {floor:g}"
        )
    return a


def is_spd(a: np.ndarray, floor: float = SPD_FLOOR) -> bool:
    """True if every matrix in the stack is symmetric positive definite."""
    if not np.allclose(a, np.swapaxes(a, -1, -2), rtol=0.0, atol=1e-12):
        return False
    w = np.linalg.eigvalsh(sym_part(a))
    return bool(np.all(w[..., 0] > floor * np.maximum(w[..., -1], 0.0)) and np.all(w[..., -1] > 0.0))


def sym_eig(a: np.ndarray):
    """Eigendecomposition of a symmetric matrix (stack).

    Returns ``(w, v)`` with eigenvalues ascending and orthonormal columns in
    ``v``, so that ``v @ diag(w) @ v^T`` reconstructs the input.
    """
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InvalidInput("non-finite entries")
    return np.linalg.eigh(sym_part(a))


def spd_fn(a: np.ndarray, kind: str, t: float | None = None) -> np.ndarray:
    """Apply a scalar function to the eigenvalues of a symmetric matrix (stack).

    ``kind`` is one of ``sqrt``, ``inv_sqrt``, ``inv``, ``exp``, ``log`` or
    ``power`` (with exponent ``t``).  Eigenvectors are preserved, so the
    result is symmetric by construction.  All kinds except ``exp`` require
    the input to be SPD.
    """
    if kind == "power":
        if t is None:
            raise InvalidInput("power requires an exponent t")
        func = lambda w: np.power(w, t)  # noqa: E731
    else:
        try:
            func = _EIG_FUNCS[kind]
        except KeyError:
            raise InvalidInput(f"unknown matrix function {kind!r}") from None
    a = np.asarray(a, dtype=float)
    if a.ndim >= 2 and a.shape[-2:] == (1, 1):
        # 1x1 fast path: the eigenvalue is the entry itself
        if not np.all(np.isfinite(a)):
            raise InvalidInput("non-finite entries")
        if kind in _NEEDS_SPD and np.any(a <= 0.0):
            raise NotPositiveDefinite(f"{kind} of a non-SPD matrix (min eig {a.min():.3e})")
        return func(a)
    w, v = sym_eig(a)
    if kind in _NEEDS_SPD:
        lo, hi = w[..., 0], w[..., -1]
        if np.any(lo <= SPD_FLOOR * np.maximum(hi, 0.0)) or np.any(hi <= 0.0):
            raise NotPositiveDefinite(f"{kind} of a non-SPD matrix (min eig {lo.min():.3e})")
    fw = func(w)
    return np.einsum("...ab,...b,...cb->...ac", v, fw, v)


def spd_sqrt(a):
    return spd_fn(a, "sqrt")


def spd_inv_sqrt(a):
    return spd_fn(a, "inv_sqrt")


def spd_inv(a):
    return spd_fn(a, "inv")


def sym_exp(a):
    return spd_fn(a, "exp")


def spd_log(a):
    return spd_fn(a, "log")


def sqrt_and_inv_sqrt(a: np.ndarray):
    """Both ``a^{1/2}`` and ``a^{-1/2}`` from a single eigendecomposition."""
    a = np.asarray(a, dtype=float)
    if a.shape[-2:] == (1, 1):
        if np.any(a <= 0.0):
            raise NotPositiveDefinite("sqrt of a non-SPD matrix")
        r = np.sqrt(a)
        return r, 1.0 / r
    w, v = sym_eig(a)
    lo, hi = w[..., 0], w[..., -1]
    if np.any(lo <= SPD_FLOOR * np.maximum(hi, 0.0)) or np.any(hi <= 0.0):
        raise NotPositiveDefinite(f"sqrt of a non-SPD matrix (min eig {lo.min():.3e})")
    rw = np.sqrt(w)
    root = np.einsum("...ab,...b,...cb->...ac", v, rw, v)
    inv_root = np.einsum("...ab,...b,...cb->...ac", v, 1.0 / rw, v)
    return root, inv_root


def riccati_solve(m: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Unique SPD solution ``T`` of ``T m T = q`` for SPD ``m``, ``q``.

    Computed as ``m^{-1/2} (m^{1/2} q m^{1/2})^{1/2} m^{-1/2}``; broadcasts
    over leading axes.
    """
    m = np.asarray(m, dtype=float)
    q = np.asarray(q, dtype=float)
    if m.shape[-2:] != q.shape[-2:]:
        raise InvalidInput(f"dimension mismatch {m.shape} vs {q.shape}")
    if m.shape[-2:] == (1, 1):
        if np.any(m <= 0.0) or np.any(q <= 0.0):
            raise NotPositiveDefinite("riccati_solve requires SPD inputs")
        return np.sqrt(q / m)
    rm, rmi = sqrt_and_inv_sqrt(m)
    inner = spd_fn(sym_part(rm @ q @ rm), "sqrt")
    return sym_part(rmi @ inner @ rmi)


def lyapunov_solve(p: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Symmetric solution ``X`` of ``(p X + X p) / 2 = b`` for SPD ``p``.

    Solved in the eigenbasis of ``p``: with ``p = V diag(w) V^T`` and
    ``B~ = V^T b V``, the solution is ``X~_ab = 2 B~_ab / (w_a + w_b)``.
    """
    p = np.asarray(p, dtype=float)
    b = np.asarray(b, dtype=float)
    if p.shape[-2:] != b.shape[-2:]:
        raise InvalidInput(f"dimension mismatch {p.shape} vs {b.shape}")
    w, v = sym_eig(p)
    if np.any(w[..., 0] <= SPD_FLOOR * np.maximum(w[..., -1], 0.0)) or np.any(w[..., -1] <= 0.0):
        raise NotPositiveDefinite("lyapunov_solve requires an SPD left factor")
    bt = np.swapaxes(v, -1, -2) @ sym_part(b) @ v
    denom = w[..., :, None] + w[..., None, :]
    xt = 2.0 * bt / denom
    return sym_part(v @ xt @ np.swapaxes(v, -1, -2))


def frob(a: np.ndarray, axis=(-2, -1)) -> np.ndarray:
    """Frobenius norm over the trailing two axes."""
    return np.sqrt(np.sum(np.asarray(a) ** 2, axis=axis))


def svec_basis(d: int) -> np.ndarray:
    """Orthonormal basis of d x d symmetric matrices, shape (d(d+1)/2, d, d).

    Diagonal elements first, then off-diagonals scaled by 1/sqrt(2) so the
    basis is orthonormal under the Frobenius inner product.
    """
    k = d * (d + 1) // 2
    basis = np.zeros((k, d, d))
    idx = 0
    for a in range(d):
        basis[idx, a, a] = 1.0
        idx += 1
    s = 1.0 / np.sqrt(2.0)
    for a in range(d):
        for b in range(a + 1, d):
            basis[idx, a, b] = s
            basis[idx, b, a] = s
            idx += 1
    return basis


def svec(a: np.ndarray, basis: np.ndarray | None = None) -> np.ndarray:
    """Half-vectorize symmetric matrices into d(d+1)/2 coordinates.

    Off-diagonals carry a sqrt(2) factor so Frobenius inner products are
    preserved: ``svec(A) . svec(B) = tr(A B)``.
    """
    a = np.asarray(a)
    if basis is None:
        basis = svec_basis(a.shape[-1])
    return np.einsum("...ab,kab->...k", a, basis)


def smat(x: np.ndarray, basis: np.ndarray | None = None, d: int | None = None) -> np.ndarray:
    """Inverse of :func:`svec`."""
    x = np.asarray(x)
    if basis is None:
        if d is None:
            k = x.shape[-1]
            d = int(round((np.sqrt(8 * k + 1) - 1) / 2))
        basis = svec_basis(d)
    return np.einsum("...k,kab->...ab", x, basis)


def congruence_operator(g: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Matrix of ``A -> g A g`` in svec coordinates, for a stack of ``g``.

    Returns shape ``(..., k, k)`` with ``k = d(d+1)/2``; symmetric PSD when
    ``g`` is SPD.
    """
    mapped = np.einsum("...ab,kbc,...cd->...kad", g, basis, g)
    return np.einsum("...kab,lab->...kl", mapped, basis)
