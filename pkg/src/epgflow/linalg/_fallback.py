"""Pure-Python (numpy/scipy) versions of the compiled kernels.

Same algorithms and return conventions as ``_kernels.pyx``; selected when
the extension is not built or ``EPGFLOW_BACKEND=python``.
"""

import numpy as np
import scipy.sparse as sp


def _csr(indptr, indices, data):
    n = len(indptr) - 1
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def csr_matvec(indptr, indices, data, x):
    return _csr(indptr, indices, data) @ x


def pcg(indptr, indices, data, diag, b, x0, rtol, maxiter):
    A = _csr(indptr, indices, data)
    x = np.array(x0, dtype=float, copy=True)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(x), 0, 0.0, 0
    r = b - A @ x
    z = r / diag
    p = z.copy()
    rz = r @ z
    rnorm = np.linalg.norm(r)
    it, status = 0, 1
    while it < maxiter:
        if rnorm <= rtol * bnorm:
            r = b - A @ x
            rnorm = np.linalg.norm(r)
            if rnorm <= rtol * bnorm:
                status = 0
                break
            z = r / diag
            p = z.copy()
            rz = r @ z
        q = A @ p
        pq = p @ q
        if pq <= 0.0:
            status = 2
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        z = r / diag
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        rnorm = np.linalg.norm(r)
        it += 1
    if status == 1 and rnorm <= rtol * bnorm:
        rnorm = np.linalg.norm(b - A @ x)
        if rnorm <= rtol * bnorm:
            status = 0
    return x, it, rnorm / bnorm, status


def bicgstab(indptr, indices, data, diag, b, x0, rtol, maxiter):
    A = _csr(indptr, indices, data)
    x = np.array(x0, dtype=float, copy=True)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(x), 0, 0.0, 0
    r = b - A @ x
    rhat = r.copy()
    p = np.zeros_like(x)
    v = np.zeros_like(x)
    rho = alpha = omega = 1.0
    rnorm = np.linalg.norm(r)
    it, status = 0, 1
    while it < maxiter:
        if rnorm <= rtol * bnorm:
            r = b - A @ x
            rnorm = np.linalg.norm(r)
            if rnorm <= rtol * bnorm:
                status = 0
                break
            rhat = r.copy()
            p[:] = 0.0
            v[:] = 0.0
            rho = alpha = omega = 1.0
        rho_new = rhat @ r
        if rho_new == 0.0 or omega == 0.0:
            status = 3
            break
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        ph = p / diag
        v = A @ ph
        tt = rhat @ v
        if tt == 0.0:
            status = 3
            break
        alpha = rho / tt
        s = r - alpha * v
        x += alpha * ph
        if np.linalg.norm(s) <= rtol * bnorm:
            r = s
            rnorm = np.linalg.norm(r)
            it += 1
            continue
        sh = s / diag
        t = A @ sh
        tt = t @ t
        omega = (t @ s) / tt if tt > 0.0 else 0.0
        x += omega * sh
        r = s - omega * t
        rnorm = np.linalg.norm(r)
        it += 1
    if status == 1 and rnorm <= rtol * bnorm:
        rnorm = np.linalg.norm(b - A @ x)
        if rnorm <= rtol * bnorm:
            status = 0
    return x, it, rnorm / bnorm, status


def gauss_seidel(indptr, indices, data, diag, order, b, x0, rtol, maxiter):
    from scipy.sparse.linalg import spsolve_triangular

    A = _csr(indptr, indices, data)
    P = A[order][:, order].tocsr()
    L = sp.tril(P, format="csr")
    U = sp.triu(P, k=1, format="csr")
    bp = b[order]
    xp = np.array(x0, dtype=float)[order]
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(len(b)), 0, 0.0, 0
    it, status, rnorm = 0, 1, np.inf
    while it < maxiter:
        rhs = bp - U @ xp if U.nnz else bp
        xp = spsolve_triangular(L, rhs, lower=True)
        it += 1
        rnorm = np.linalg.norm(bp - P @ xp)
        if rnorm <= rtol * bnorm:
            status = 0
            break
    x = np.empty_like(xp)
    x[order] = xp
    return x, it, rnorm / bnorm, status
