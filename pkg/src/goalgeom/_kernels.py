"""Hot-loop kernels with a compiled path and a numpy fallback.

The compiled extension ``goalgeom._jacobi`` is used when it imports; otherwise
(or when ``GOALGEOM_PURE_PYTHON=1`` is set) the vectorized numpy version below
runs the same one-sided Jacobi iteration across the whole stack at once.
"""

import os

import numpy as np

__all__ = ["BACKEND", "jacobi_orthogonalize", "jacobi_orthogonalize_py"]


def jacobi_orthogonalize_py(w, q, accumulate, tol, max_sweeps):
    """Numpy twin of the compiled kernel; same signature, same rotation rule."""
    nb, p, n = w.shape
    if nb == 0 or p < 2:
        return 1 if nb else 0
    # rows below roundoff of the whole matrix count as zero, else cancellation noise never settles
    tiny = np.einsum("bij,bij->b", w, w) * (n * np.finfo(np.float64).eps) ** 2
    sweeps = 0
    while True:
        if sweeps >= max_sweeps:
            return -1
        sweeps += 1
        rotated = False
        for i in range(p - 1):
            for j in range(i + 1, p):
                wi = w[:, i, :]
                wj = w[:, j, :]
                alpha = np.einsum("bt,bt->b", wi, wi)
                beta = np.einsum("bt,bt->b", wj, wj)
                gamma = np.einsum("bt,bt->b", wi, wj)
                act = (alpha > tiny) & (beta > tiny) & (np.abs(gamma) > tol * np.sqrt(alpha) * np.sqrt(beta))
                if not act.any():
                    continue
                rotated = True
                g = np.where(act, gamma, 1.0)
                zeta = (beta - alpha) / (2.0 * g)
                root = np.sqrt(1.0 + zeta * zeta)
                t = np.where(zeta >= 0.0, 1.0, -1.0) / (np.abs(zeta) + root)
                c = np.where(act, 1.0 / np.sqrt(1.0 + t * t), 1.0)
                s = np.where(act, c * t, 0.0)
                c = c[:, None]
                s = s[:, None]
                xi = wi.copy()
                w[:, i, :] = c * xi - s * wj
                w[:, j, :] = s * xi + c * wj
                if accumulate:
                    qi = q[:, i, :].copy()
                    qj = q[:, j, :]
                    q[:, i, :] = c * qi - s * qj
                    q[:, j, :] = s * qi + c * qj
        if not rotated:
            return sweeps


def _select():
    if os.environ.get("GOALGEOM_PURE_PYTHON", "") not in ("", "0"):
        return "python", jacobi_orthogonalize_py
    try:
        from goalgeom._jacobi import jacobi_orthogonalize as compiled
    except ImportError:
        return "python", jacobi_orthogonalize_py
    return "cython", compiled


BACKEND, jacobi_orthogonalize = _select()
