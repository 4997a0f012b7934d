"""Sparse storage and the two solver classes used by the flow and transport code.

Matrices are ``scipy.sparse.csr_matrix``. The iterative solver loops run in the
compiled ``_kernels`` extension when it is importable, otherwise in the
numpy fallback. ``EPGFLOW_BACKEND`` (``auto`` | ``ext`` | ``python``)
overrides the choice.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _fallback

_choice = os.environ.get("EPGFLOW_BACKEND", "auto").lower()
_ext = None
if _choice in ("auto", "ext"):
    try:
        from . import _kernels as _ext
    except ImportError:
        if _choice == "ext":
            raise
_kern = _ext if _ext is not None else _fallback
BACKEND = "ext" if _ext is not None else "python"

DENSE_LIMIT = 2000


class SolverError(RuntimeError):
    """A linear solve failed; ``report`` carries the diagnostics."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class IndefiniteMatrixError(SolverError):
    pass


class MMatrixError(ValueError):
    """Structural check of an M-matrix candidate failed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class SingularSystemError(ValueError):
    pass


@dataclass(frozen=True)
class SolveReport:
    method: str
    iterations: int
    residual: float  # ||b - A x|| / ||b|| recomputed after the solve
    solver_residual: float
    converged: bool
    backend: str = BACKEND

    def __str__(self):
        flag = "ok" if self.converged else "FAILED"
        return (
            f"{self.method}[{self.backend}] {flag}: {self.iterations} it, "
            f"relres {self.residual:.3e} (solver {self.solver_residual:.3e})"
        )


def as_csr(A) -> sp.csr_matrix:
    """CSR copy with duplicates summed, sorted indices and int64 index arrays."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    A.indptr = A.indptr.astype(np.int64)
    A.indices = A.indices.astype(np.int64)
    return A


def _relres(A, x, b) -> float:
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return float(np.linalg.norm(A @ x))
    return float(np.linalg.norm(b - A @ x) / bnorm)


def _arrays(A):
    A = as_csr(A)
    return A, (A.indptr, A.indices, np.ascontiguousarray(A.data))


def solve_spd(A, b, rtol: float = 1e-12, x0=None, maxiter: int | None = None, backend=None):
    """Jacobi-preconditioned conjugate gradients.

    Returns ``(x, report)``. A non-positive curvature ``p.Ap`` raises
    :class:`IndefiniteMatrixError`; hitting ``maxiter`` returns with
    ``report.converged`` False.
    """
    if rtol < 1e-14:
        raise ValueError("rtol below 1e-14 is not attainable in double precision")
    A, arrs = _arrays(A)
    b = np.ascontiguousarray(b, dtype=float)
    n = len(b)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise IndefiniteMatrixError("non-positive diagonal entry in SPD solve")
    x0 = np.zeros(n) if x0 is None else np.ascontiguousarray(x0, dtype=float)
    maxiter = maxiter or max(10 * n, 1000)
    kern = _pick(backend)
    x, it, res, status = kern.pcg(*arrs, diag, b, x0, float(rtol), int(maxiter))
    x = np.asarray(x)
    report = SolveReport("pcg-jacobi", int(it), _relres(A, x, b), float(res), status == 0, _name(kern))
    if status == 2:
        raise IndefiniteMatrixError("negative curvature detected: matrix is not positive definite", report)
    return x, report


def validate_mmatrix(A) -> dict:
    """Diagonal sign, off-diagonal sign and column diagonal dominance.

    Returns a dict with boolean ``diag_positive``, ``offdiag_nonpositive``,
    ``column_dominant``, ``ok``, the per-column ``margin``
    (``a_jj - sum_{i != j} |a_ij|``) and the location of the first offending
    entry for each failed check.
    """
    A = as_csr(A)
    C = A.tocoo()
    diag = A.diagonal()
    off = C.row != C.col
    pos_off = off & (C.data > 0)
    col_abs = np.bincount(C.col[off], weights=np.abs(C.data[off]), minlength=A.shape[1])
    margin = diag - col_abs
    out = {
        "diag_positive": bool(np.all(diag > 0)),
        "offdiag_nonpositive": bool(not np.any(pos_off)),
        "column_dominant": bool(np.all(margin >= 0)),
        "strict_columns": int(np.count_nonzero(margin > 0)),
        "margin": margin,
        "min_margin": float(margin.min()) if len(margin) else 0.0,
    }
    if not out["diag_positive"]:
        out["diag_failure"] = int(np.argmin(diag))
    if not out["offdiag_nonpositive"]:
        i = int(np.flatnonzero(pos_off)[0])
        out["offdiag_failure"] = (int(C.row[i]), int(C.col[i]), float(C.data[i]))
    if not out["column_dominant"]:
        out["dominance_failure"] = int(np.argmin(margin))
    out["ok"] = out["diag_positive"] and out["offdiag_nonpositive"] and out["column_dominant"]
    return out


def upwind_order(A) -> np.ndarray:
    """Row order that makes ``A`` block lower triangular.

    Rows are grouped by strongly connected component of the dependency graph
    (row i depends on column j when ``a_ij != 0``) and the components are
    listed upstream first. For an acyclic graph the permuted matrix is
    triangular and one Gauss-Seidel sweep solves exactly.
    """
    from scipy.sparse.csgraph import connected_components

    A = as_csr(A)
    C = A.tocoo()
    off = C.row != C.col
    # edge j -> i: i needs x_j first
    G = sp.csr_matrix((np.ones(off.sum()), (C.col[off], C.row[off])), shape=A.shape)
    n_comp, label = connected_components(G, directed=True, connection="strong")
    src, dst = label[C.col[off]], label[C.row[off]]
    keep = src != dst
    pairs = np.unique(np.stack([src[keep], dst[keep]], axis=1), axis=0)
    indeg = np.bincount(pairs[:, 1], minlength=n_comp)
    succ_ptr = np.searchsorted(pairs[:, 0], np.arange(n_comp + 1))
    succ = pairs[:, 1]
    ready = list(np.flatnonzero(indeg == 0)[::-1])
    rank = np.empty(n_comp, dtype=np.int64)
    pos = 0
    while ready:
        c = ready.pop()
        rank[c] = pos
        pos += 1
        for d in succ[succ_ptr[c]:succ_ptr[c + 1]]:
            indeg[d] -= 1
            if indeg[d] == 0:
                ready.append(d)
    return np.argsort(rank[label], kind="stable").astype(np.int64)


class MMatrixSolver:
    """Validated M-matrix with a cached factor-free solve strategy.

    ``method``: ``sweep`` (Gauss-Seidel in upwind order, default),
    ``bicgstab`` (Jacobi-preconditioned) or ``dense`` (LU, oracle only,
    at most ``DENSE_LIMIT`` unknowns).
    """

    def __init__(self, A, method: str = "sweep", backend=None, validate: bool = True):
        self.A, self._arrs = _arrays(A)
        self.diagnostics = validate_mmatrix(self.A) if validate else None
        if validate and not self.diagnostics["ok"]:
            failed = [k for k in ("diag_positive", "offdiag_nonpositive", "column_dominant")
                      if not self.diagnostics[k]]
            raise MMatrixError(f"M-matrix validation failed: {', '.join(failed)}", self.diagnostics)
        if method not in ("sweep", "bicgstab", "dense"):
            raise ValueError(f"unknown method {method!r}")
        if method == "dense" and self.A.shape[0] > DENSE_LIMIT:
            raise ValueError(f"dense solve limited to {DENSE_LIMIT} unknowns")
        self.method = method
        self.diag = self.A.diagonal()
        self._kern = _pick(backend)
        self.order = upwind_order(self.A) if method == "sweep" else None

    def solve(self, b, rtol: float = 1e-13, x0=None, maxiter: int | None = None):
        A = self.A
        b = np.ascontiguousarray(b, dtype=float)
        n = len(b)
        if self.method == "dense":
            x = np.linalg.solve(A.toarray(), b)
            rr = _relres(A, x, b)
            return x, SolveReport("dense-lu", 1, rr, rr, True, "numpy")
        x0 = np.zeros(n) if x0 is None else np.ascontiguousarray(x0, dtype=float)
        if self.method == "sweep":
            maxiter = maxiter or 10 * n + 100
            x, it, res, status = self._kern.gauss_seidel(
                *self._arrs, self.diag, self.order, b, x0, float(rtol), int(maxiter))
            tag = "gs-upwind"
        else:
            maxiter = maxiter or max(10 * n, 1000)
            x, it, res, status = self._kern.bicgstab(*self._arrs, self.diag, b, x0, float(rtol), int(maxiter))
            tag = "bicgstab-jacobi"
        x = np.asarray(x)
        return x, SolveReport(tag, int(it), _relres(A, x, b), float(res), status == 0, _name(self._kern))


def solve_mmatrix(A, b, rtol: float = 1e-13, x0=None, method: str = "sweep",
                  maxiter: int | None = None, backend=None):
    """Solve ``A x = b`` after validating the M-matrix sign/dominance structure.

    Raises :class:`MMatrixError` before any work if validation fails.
    """
    return MMatrixSolver(A, method, backend).solve(b, rtol, x0, maxiter)


def dense_solve(A, b) -> np.ndarray:
    """Direct dense solve; oracle for small systems."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A)
    return np.linalg.solve(A, b)


def write_coo(A, path) -> None:
    """Dump ``row col value`` lines, 0-based, for external inspection."""
    C = as_csr(A).tocoo()
    with open(path, "w") as fh:
        fh.write(f"% {C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for i, j, v in zip(C.row, C.col, C.data):
            fh.write(f"{i} {j} {v:.17g}\n")


def _pick(backend):
    if backend is None:
        return _kern
    if backend == "python":
        return _fallback
    if backend == "ext":
        if _ext is None:
            raise RuntimeError("compiled kernels are not available")
        return _ext
    raise ValueError(f"unknown backend {backend!r}")


def _name(kern):
    return "ext" if kern is _ext and _ext is not None else "python"


def ext_available() -> bool:
    return _ext is not None
