"""Dense real-matrix primitives: SVD, norms, numerical rank, bases, principal angles.

Matrices are plain 2-D ``float64`` numpy arrays laid out feature-by-sample:
rows are the feature dimension and each column is one sample. The SVD is a
one-sided Jacobi iteration (compiled when available, see ``_kernels``), applied
to whichever orientation has fewer rows so the cost is linear in the long side.
"""

from dataclasses import dataclass

import numpy as np

from goalgeom import _kernels

__all__ = [
    "DEFAULT_REL_TOL",
    "DimensionError",
    "NumericalError",
    "PreconditionError",
    "SvdResult",
    "as_mat",
    "concat_cols",
    "nuclear_norm",
    "numerical_rank",
    "orthonormal_basis",
    "principal_angle_cosines",
    "singular_values",
    "singular_values_batch",
    "spectral_norm",
    "svd",
]

DEFAULT_REL_TOL = 1e-10

_EPS = np.finfo(np.float64).eps


class NumericalError(ArithmeticError):
    """An iterative routine failed to converge."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class PreconditionError(ValueError):
    """An input violates a documented precondition."""


def as_mat(m, name="matrix"):
    """Return ``m`` as a finite 2-D float64 array, or raise ``ValueError``."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``m = u @ diag(sigma) @ v.T`` with ``r = min(rows, cols)``."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


def _max_sweeps(p):
    return 100 * max(p, 1)


def _tol(m):
    return 8.0 * _EPS * np.sqrt(max(m, 1))


def _complete(vecs, filled):
    """Replace the columns of ``vecs`` not marked ``filled`` with an orthonormal completion."""
    n, r = vecs.shape
    if filled.all():
        return vecs
    out = vecs.copy()
    basis = [out[:, j] for j in range(r) if filled[j]]
    missing = [j for j in range(r) if not filled[j]]
    cand = 0
    for j in missing:
        while True:
            e = np.zeros(n)
            e[cand % n] = 1.0
            cand += 1
            for b in basis:
                e -= (b @ e) * b
            for b in basis:
                e -= (b @ e) * b
            nrm = np.linalg.norm(e)
            if nrm > 0.5:
                break
        e /= nrm
        out[:, j] = e
        basis.append(e)
    return out


def _fix_signs(u, v):
    if u.size == 0:
        return u, v
    idx = np.argmax(np.abs(u), axis=0)
    flip = u[idx, np.arange(u.shape[1])] < 0
    u = u.copy()
    v = v.copy()
    u[:, flip] *= -1.0
    v[:, flip] *= -1.0
    return u, v


def svd(m):
    """Thin singular value decomposition.

    Parameters
    ----------
    m : array_like
        Finite ``rows x cols`` matrix.

    Returns
    -------
    SvdResult
        ``u`` (rows x r), ``sigma`` non-increasing, ``v`` (cols x r), both
        factors with orthonormal columns. Each column of ``u`` has its
        largest-magnitude entry positive.

    Raises
    ------
    NumericalError
        If the Jacobi sweeps do not converge within ``100 * min(rows, cols)``.
    """
    a = as_mat(m)
    rows, cols = a.shape
    wide = rows <= cols
    w, scale = _oriented(a)
    p, n = w.shape
    q = np.eye(p)
    sweeps = _kernels.jacobi_orthogonalize(w[None], q[None], True, _tol(n), _max_sweeps(p))
    if sweeps < 0:
        raise NumericalError(_condition_report(a))
    norms = np.sqrt(np.einsum("ij,ij->i", w, w))
    order = np.argsort(-norms, kind="stable")
    unit_sigma = norms[order]
    # rows the kernel treated as zero carry roundoff only; their vectors come from the completion
    floor = np.sqrt(np.einsum("ij,ij->", w, w)) * n * _EPS
    filled = unit_sigma > floor
    long_vecs = np.zeros((n, p))
    long_vecs[:, filled] = (w[order][filled] / unit_sigma[filled, None]).T
    sigma = unit_sigma * scale
    long_vecs = _complete(long_vecs, filled)
    short_vecs = q[order].T
    if wide:
        u, v = short_vecs, long_vecs
    else:
        u, v = long_vecs, short_vecs
    u, v = _fix_signs(u, v)
    return SvdResult(u=u, sigma=sigma, v=v)


def _oriented(a):
    """Copy of ``a`` with fewer rows than columns, scaled to unit max-abs entry, and the scale."""
    w = np.array(a if a.shape[0] <= a.shape[1] else a.T, order="C")
    scale = float(np.abs(w).max()) if w.size else 0.0
    if scale > 0.0:
        w /= scale
    return w, scale


def _condition_report(a):
    g = a @ a.T if a.shape[0] <= a.shape[1] else a.T @ a
    ev = np.linalg.eigvalsh(g)
    top = np.sqrt(max(ev[-1], 0.0))
    bottom = np.sqrt(max(ev[0], 0.0))
    cond = top / bottom if bottom > 0 else np.inf
    return (f"Jacobi SVD did not converge for {a.shape[0]}x{a.shape[1]} matrix "
            f"(sigma_max~{top:.3e}, sigma_min~{bottom:.3e}, cond~{cond:.3e})")


def singular_values(m):
    """Singular values only (no vector accumulation), non-increasing."""
    a = as_mat(m)
    w, scale = _oriented(a)
    p, n = w.shape
    sweeps = _kernels.jacobi_orthogonalize(w[None], np.empty((1, 0, 0)), False, _tol(n), _max_sweeps(p))
    if sweeps < 0:
        raise NumericalError(_condition_report(a))
    return np.sort(np.sqrt(np.einsum("ij,ij->i", w, w)))[::-1] * scale


def singular_values_batch(stack):
    """Singular values of every matrix in a ``(b, rows, cols)`` stack; returns ``(b, r)``."""
    s = np.asarray(stack, dtype=np.float64)
    if s.ndim != 3:
        raise DimensionError(f"expected a 3-D stack, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("stack has non-finite entries")
    w = np.array(s if s.shape[1] <= s.shape[2] else s.transpose(0, 2, 1), order="C")
    _, p, n = w.shape
    scale = np.abs(w).max(axis=(1, 2)) if w.size else np.zeros(w.shape[0])
    scale = np.where(scale > 0.0, scale, 1.0)
    w /= scale[:, None, None]
    sweeps = _kernels.jacobi_orthogonalize(w, np.empty((w.shape[0], 0, 0)), False, _tol(n), _max_sweeps(p))
    if sweeps < 0:
        raise NumericalError(f"batched Jacobi SVD did not converge on stack of shape {s.shape}")
    return -np.sort(-np.sqrt(np.einsum("bij,bij->bi", w, w)), axis=1) * scale[:, None]


def nuclear_norm(m):
    """Sum of singular values."""
    return float(singular_values(m).sum())


def spectral_norm(m):
    """Largest singular value."""
    s = singular_values(m)
    return float(s[0]) if s.size else 0.0


def _rank_from_sigma(sigma, shape, rel_tol):
    if rel_tol <= 0:
        raise PreconditionError("rel_tol must be positive")
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(sigma > rel_tol * sigma[0] * max(shape)))


def numerical_rank(m, rel_tol=DEFAULT_REL_TOL):
    """Count of singular values above ``rel_tol * sigma_max * max(rows, cols)``."""
    a = as_mat(m)
    return _rank_from_sigma(singular_values(a), a.shape, rel_tol)


def orthonormal_basis(m, rel_tol=DEFAULT_REL_TOL):
    """Left singular vectors spanning the numerical column space of ``m``.

    The all-zero matrix yields a ``rows x 0`` array rather than an error.
    """
    a = as_mat(m)
    res = svd(a)
    r = _rank_from_sigma(res.sigma, a.shape, rel_tol)
    return res.u[:, :r]


def _check_orthonormal(b, name, tol=1e-6):
    if b.shape[1] == 0:
        return
    err = np.abs(b.T @ b - np.eye(b.shape[1])).max()
    if err > tol:
        raise PreconditionError(f"{name} does not have orthonormal columns (max |B^T B - I| = {err:.2e})")


def principal_angle_cosines(basis_a, basis_b):
    """Cosines of the principal angles between two subspaces.

    Both arguments must have orthonormal columns. The cosines are the singular
    values of ``basis_a.T @ basis_b`` (Bjorck-Golub), clipped to ``[0, 1]``
    and returned non-increasing with length ``min(cols_a, cols_b)``.
    """
    a = np.asarray(basis_a, dtype=np.float64)
    b = np.asarray(basis_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("bases must be 2-D")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"row mismatch: basis_a has {a.shape[0]}, basis_b has {b.shape[0]}")
    _check_orthonormal(a, "basis_a")
    _check_orthonormal(b, "basis_b")
    if a.shape[1] == 0 or b.shape[1] == 0:
        return np.zeros(0)
    c = a.T @ b
    if c.shape[0] > c.shape[1]:
        c = c.T
    return np.clip(singular_values(c), 0.0, 1.0)


def concat_cols(a, b):
    """Column-wise concatenation ``[a, b]``; either side may have zero columns."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("concat_cols expects 2-D operands")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"row mismatch: {a.shape[0]} vs {b.shape[0]}")
    return np.concatenate([a, b], axis=1)
