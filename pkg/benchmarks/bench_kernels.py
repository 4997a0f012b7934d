"""Time the compiled solver kernels against the numpy fallback.

Run from the repository root::

    python benchmarks/bench_kernels.py [--level 6] [--repeat 3]

Each row calls the same kernel from both backends on identical CSR arrays and reports the best
wall time, the iteration count and the max difference of the solutions.
"""

import argparse
import time

import numpy as np

from epgflow import darcy, linalg, transport
from epgflow.linalg import _fallback
from epgflow.mesh import build_structured_mesh
from epgflow.problems import preset


def best_time(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _csr_args(A):
    A = linalg.as_csr(A)
    return A, (A.indptr, A.indices, np.ascontiguousarray(A.data))


def systems(level):
    """Yield ``(label, kernel name, argument tuple)`` for each benchmarked solve."""
    p = preset("example1")
    mesh = build_structured_mesh(p.spec(), level)
    data = p.data()
    rng = np.random.default_rng(0)
    for label, A, b in (
        ("pcg      CG P2", *(lambda s: (s.matrix, s.rhs))(darcy.assemble_cg(mesh, 2, data))),
        ("pcg      bubble", darcy.bubble_matrix(mesh), rng.standard_normal(mesh.n_elements)),
    ):
        A, arrs = _csr_args(A)
        yield label, "pcg", (*arrs, A.diagonal(), b, np.zeros(len(b)), 1e-12, 10 * len(b))
    sol = darcy.solve_epg(mesh, 1, data)
    flux = darcy.recover_velocity(mesh, sol, data)
    A, arrs = _csr_args(transport.assemble_implicit_matrix(mesh, flux, 0.2, 0.05)[0])
    c = rng.uniform(0, 1, mesh.n_elements)
    x0 = np.zeros(len(c))
    order = linalg.upwind_order(A)
    yield "sweep    transport", "gauss_seidel", (*arrs, A.diagonal(), order, c, x0, 1e-13, 100)
    yield "bicgstab transport", "bicgstab", (*arrs, A.diagonal(), c, x0, 1e-13, 10 * len(c))
    x = rng.standard_normal(A.shape[0])
    yield "matvec   transport", "csr_matvec", (*arrs, x)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--level", type=int, default=6)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not linalg.ext_available():
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation`")
    from epgflow.linalg import _kernels

    print(f"level {args.level}, best of {args.repeat}")
    print(f"{'system':24s} {'python [s]':>11s} {'ext [s]':>9s} {'speedup':>8s} {'iters':>6s} {'max diff':>9s}")
    for name, kernel, call_args in systems(args.level):
        t_py, out_py = best_time(lambda: getattr(_fallback, kernel)(*call_args), args.repeat)
        t_ext, out_ext = best_time(lambda: getattr(_kernels, kernel)(*call_args), args.repeat)
        if kernel == "csr_matvec":
            x_py, x_ext, iters = out_py, np.asarray(out_ext), 1
        else:
            x_py, x_ext, iters = out_py[0], np.asarray(out_ext[0]), out_ext[1]
        diff = np.abs(x_py - x_ext).max()
        print(f"{name:24s} {t_py:11.4f} {t_ext:9.4f} {t_py / t_ext:8.1f} {iters:6d} {diff:9.1e}")


if __name__ == "__main__":
    main()
