# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled solver kernels on CSR storage: Jacobi PCG, BiCGStab, ordered Gauss-Seidel."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

ctypedef cnp.int64_t idx_t


cdef inline void _matvec(const idx_t[::1] indptr, const idx_t[::1] indices,
                         const double[::1] data, const double[::1] x,
                         double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double s
    for i in range(out.shape[0]):
        s = 0.0
        for j in range(indptr[i], indptr[i + 1]):
            s += data[j] * x[indices[j]]
        out[i] = s


cdef inline double _dot(const double[::1] a, const double[::1] b) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


cdef inline double _true_residual(const idx_t[::1] indptr, const idx_t[::1] indices,
                                  const double[::1] data, const double[::1] b,
                                  const double[::1] x, double[::1] r) noexcept nogil:
    cdef Py_ssize_t i
    _matvec(indptr, indices, data, x, r)
    for i in range(r.shape[0]):
        r[i] = b[i] - r[i]
    return sqrt(_dot(r, r))


def csr_matvec(idx_t[::1] indptr, idx_t[::1] indices, double[::1] data, double[::1] x):
    out = np.empty(indptr.shape[0] - 1)
    cdef double[::1] o = out
    with nogil:
        _matvec(indptr, indices, data, x, o)
    return out


def pcg(idx_t[::1] indptr, idx_t[::1] indices, double[::1] data, double[::1] diag,
        double[::1] b, double[::1] x0, double rtol, long maxiter):
    """Returns (x, iterations, recursive relres, status); status 0 ok, 1 maxiter, 2 curvature."""
    cdef Py_ssize_t n = b.shape[0], i
    x_arr = np.array(x0, dtype=np.float64, copy=True)
    cdef double[::1] x = x_arr
    cdef double[::1] r = np.empty(n)
    cdef double[::1] z = np.empty(n)
    cdef double[::1] p = np.empty(n)
    cdef double[::1] q = np.empty(n)
    cdef double bnorm = sqrt(_dot(b, b))
    cdef double rnorm, rz, rz_new, pq, alpha, beta
    cdef long it = 0
    cdef int status = 1
    if bnorm == 0.0:
        x_arr[:] = 0.0
        return x_arr, 0, 0.0, 0
    with nogil:
        rnorm = _true_residual(indptr, indices, data, b, x, r)
        for i in range(n):
            z[i] = r[i] / diag[i]
            p[i] = z[i]
        rz = _dot(r, z)
        while it < maxiter:
            if rnorm <= rtol * bnorm:
                # confirm with the true residual before stopping
                rnorm = _true_residual(indptr, indices, data, b, x, r)
                if rnorm <= rtol * bnorm:
                    status = 0
                    break
                for i in range(n):
                    z[i] = r[i] / diag[i]
                    p[i] = z[i]
                rz = _dot(r, z)
            _matvec(indptr, indices, data, p, q)
            pq = _dot(p, q)
            if pq <= 0.0:
                status = 2
                break
            alpha = rz / pq
            for i in range(n):
                x[i] += alpha * p[i]
                r[i] -= alpha * q[i]
                z[i] = r[i] / diag[i]
            rz_new = _dot(r, z)
            beta = rz_new / rz
            rz = rz_new
            for i in range(n):
                p[i] = z[i] + beta * p[i]
            rnorm = sqrt(_dot(r, r))
            it += 1
        if status == 1 and rnorm <= rtol * bnorm:
            rnorm = _true_residual(indptr, indices, data, b, x, r)
            if rnorm <= rtol * bnorm:
                status = 0
    return x_arr, it, rnorm / bnorm, status


def bicgstab(idx_t[::1] indptr, idx_t[::1] indices, double[::1] data, double[::1] diag,
             double[::1] b, double[::1] x0, double rtol, long maxiter):
    """Right-Jacobi-preconditioned BiCGStab. Status 0 ok, 1 maxiter, 3 breakdown."""
    cdef Py_ssize_t n = b.shape[0], i
    x_arr = np.array(x0, dtype=np.float64, copy=True)
    cdef double[::1] x = x_arr
    cdef double[::1] r = np.empty(n)
    cdef double[::1] rhat = np.empty(n)
    cdef double[::1] p = np.zeros(n)
    cdef double[::1] v = np.zeros(n)
    cdef double[::1] s = np.empty(n)
    cdef double[::1] t = np.empty(n)
    cdef double[::1] ph = np.empty(n)
    cdef double[::1] sh = np.empty(n)
    cdef double bnorm = sqrt(_dot(b, b))
    cdef double rnorm, rho = 1.0, rho_new, alpha = 1.0, omega = 1.0, beta, tt
    cdef long it = 0
    cdef int status = 1
    if bnorm == 0.0:
        x_arr[:] = 0.0
        return x_arr, 0, 0.0, 0
    with nogil:
        rnorm = _true_residual(indptr, indices, data, b, x, r)
        for i in range(n):
            rhat[i] = r[i]
        while it < maxiter:
            if rnorm <= rtol * bnorm:
                rnorm = _true_residual(indptr, indices, data, b, x, r)
                if rnorm <= rtol * bnorm:
                    status = 0
                    break
                # restart from the true residual
                for i in range(n):
                    rhat[i] = r[i]
                    p[i] = 0.0
                    v[i] = 0.0
                rho = 1.0
                alpha = 1.0
                omega = 1.0
            rho_new = _dot(rhat, r)
            if rho_new == 0.0 or omega == 0.0:
                status = 3
                break
            beta = (rho_new / rho) * (alpha / omega)
            rho = rho_new
            for i in range(n):
                p[i] = r[i] + beta * (p[i] - omega * v[i])
                ph[i] = p[i] / diag[i]
            _matvec(indptr, indices, data, ph, v)
            tt = _dot(rhat, v)
            if tt == 0.0:
                status = 3
                break
            alpha = rho / tt
            for i in range(n):
                s[i] = r[i] - alpha * v[i]
                x[i] += alpha * ph[i]
            if sqrt(_dot(s, s)) <= rtol * bnorm:
                for i in range(n):
                    r[i] = s[i]
                rnorm = sqrt(_dot(r, r))
                it += 1
                continue
            for i in range(n):
                sh[i] = s[i] / diag[i]
            _matvec(indptr, indices, data, sh, t)
            tt = _dot(t, t)
            omega = _dot(t, s) / tt if tt > 0.0 else 0.0
            for i in range(n):
                x[i] += omega * sh[i]
                r[i] = s[i] - omega * t[i]
            rnorm = sqrt(_dot(r, r))
            it += 1
        if status == 1 and rnorm <= rtol * bnorm:
            rnorm = _true_residual(indptr, indices, data, b, x, r)
            if rnorm <= rtol * bnorm:
                status = 0
    return x_arr, it, rnorm / bnorm, status


def gauss_seidel(idx_t[::1] indptr, idx_t[::1] indices, double[::1] data, double[::1] diag,
                 idx_t[::1] order, double[::1] b, double[::1] x0, double rtol, long maxiter):
    """Forward Gauss-Seidel sweeps in the given row order.

    One sweep is an exact solve when ``order`` makes the matrix triangular.
    Status 0 ok, 1 maxiter.
    """
    cdef Py_ssize_t n = b.shape[0], k, i, j
    cdef idx_t row
    x_arr = np.array(x0, dtype=np.float64, copy=True)
    cdef double[::1] x = x_arr
    cdef double[::1] r = np.empty(n)
    cdef double bnorm = sqrt(_dot(b, b))
    cdef double s, rnorm = 0.0
    cdef long it = 0
    cdef int status = 1
    if bnorm == 0.0:
        x_arr[:] = 0.0
        return x_arr, 0, 0.0, 0
    with nogil:
        while it < maxiter:
            for k in range(n):
                row = order[k]
                s = b[row]
                for j in range(indptr[row], indptr[row + 1]):
                    if indices[j] != row:
                        s -= data[j] * x[indices[j]]
                x[row] = s / diag[row]
            it += 1
            rnorm = _true_residual(indptr, indices, data, b, x, r)
            if rnorm <= rtol * bnorm:
                status = 0
                break
    return x_arr, it, rnorm / bnorm, status
