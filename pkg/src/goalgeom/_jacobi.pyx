# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled one-sided Jacobi sweeps over a stack of small dense matrices."""

from libc.math cimport sqrt, fabs


cdef inline void _rotate(double[:, ::1] a, Py_ssize_t i, Py_ssize_t j,
                         double c, double s) noexcept nogil:
    cdef Py_ssize_t t
    cdef double xi, xj
    for t in range(a.shape[1]):
        xi = a[i, t]
        xj = a[j, t]
        a[i, t] = c * xi - s * xj
        a[j, t] = s * xi + c * xj


def jacobi_orthogonalize(double[:, :, ::1] w, double[:, :, ::1] q,
                         bint accumulate, double tol, int max_sweeps):
    """Rotate the rows of every ``w[b]`` in place until they are mutually orthogonal.

    Rotations are mirrored onto ``q[b]`` when ``accumulate`` is set. Returns the
    largest number of sweeps any matrix needed, or -1 if one did not converge.
    """
    cdef Py_ssize_t nb = w.shape[0], p = w.shape[1], m = w.shape[2]
    cdef Py_ssize_t b, i, j, t
    cdef double alpha, beta, gamma, zeta, tt, c, s, xi, xj, tiny
    cdef double eps = 2.220446049250313e-16
    cdef int sweep, worst = 0
    cdef bint rotated
    cdef double[:, ::1] wb
    with nogil:
        for b in range(nb):
            wb = w[b]
            # rows below roundoff of the whole matrix count as zero, else cancellation noise never settles
            tiny = 0.0
            for i in range(p):
                for t in range(m):
                    tiny += wb[i, t] * wb[i, t]
            tiny *= (m * eps) * (m * eps)
            sweep = 0
            rotated = True
            while rotated:
                if sweep >= max_sweeps:
                    worst = -1
                    break
                rotated = False
                sweep += 1
                for i in range(p - 1):
                    for j in range(i + 1, p):
                        alpha = 0.0
                        beta = 0.0
                        gamma = 0.0
                        for t in range(m):
                            xi = wb[i, t]
                            xj = wb[j, t]
                            alpha += xi * xi
                            beta += xj * xj
                            gamma += xi * xj
                        if alpha <= tiny or beta <= tiny:
                            continue
                        if fabs(gamma) <= tol * sqrt(alpha) * sqrt(beta):
                            continue
                        rotated = True
                        zeta = (beta - alpha) / (2.0 * gamma)
                        if zeta >= 0.0:
                            tt = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                        else:
                            tt = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                        c = 1.0 / sqrt(1.0 + tt * tt)
                        s = c * tt
                        _rotate(wb, i, j, c, s)
                        if accumulate:
                            _rotate(q[b], i, j, c, s)
            if worst == -1:
                break
            if sweep > worst:
                worst = sweep
    return worst
