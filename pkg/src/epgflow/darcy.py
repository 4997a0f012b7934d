"""Darcy pressure by continuous Galerkin and by the enriched Petrov-Galerkin method.

The enriched solve runs in two steps. A standard CG solve with strongly
imposed Dirichlet data comes first. Then a single bubble amplitude per
element removes the CG local conservation defect. Face fluxes of the
recovered velocity are what the transport solver consumes.

Sign convention: velocity ``u = -K grad p``; edge fluxes are integrals of
``u . n_e`` with ``n_e`` the stored edge normal (out of ``edge_elems[:, 0]``);
for boundary edges this is the outward normal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import linalg
from .basis import BubbleBasis, LagrangeBasis, bubble_eval, edge_points, quadrature
from .linalg import SingularSystemError, SolverError, SolveReport
from .mesh import DIRICHLET, INTERIOR, NEUMANN, Mesh

TRI_DEGREE = 10
EDGE_DEGREE = 8

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _zero(x, y):
    return np.zeros(np.broadcast(x, y).shape)


@dataclass
class ProblemData:
    """Source, boundary data and conductivity of a Darcy problem.

    ``conductivity`` is sampled at element centroids (piecewise constant);
    ``None`` defers to the mesh's domain spec. ``g_N`` is the prescribed
    outward flux ``u . n`` on Neumann edges.
    """

    f: Field = _zero
    p_D: Field = _zero
    g_N: Field = _zero
    conductivity: Field | None = None
    exact_p: Field | None = None
    exact_grad: Callable | None = None

    def K(self, mesh: Mesh) -> np.ndarray:
        if self.conductivity is None:
            return mesh.conductivity()
        c = mesh.centroids()
        return np.broadcast_to(np.asarray(self.conductivity(c[:, 0], c[:, 1]), float), (mesh.n_elements,)).copy()


class DofMap:
    """Global numbering of the continuous P_k space on a mesh."""

    def __init__(self, mesh: Mesh, k: int):
        self.mesh = mesh
        self.k = k
        self.basis = LagrangeBasis(k)
        Nv, E, M = len(mesh.vertices), mesh.n_edges, mesh.n_elements
        T = mesh.triangles
        cell = np.empty((M, self.basis.n_local), dtype=np.int64)
        cell[:, :3] = T
        col = 3
        # aligned[T, i]: local edge i runs in the global edge direction
        self.aligned = T[:, [1, 2, 0]] == mesh.edges[mesh.elem_edges, 0]
        for i in range(3):
            e = mesh.elem_edges[:, i]
            for s in range(1, k):
                pos = np.where(self.aligned[:, i], s - 1, k - 1 - s)
                cell[:, col] = Nv + e * (k - 1) + pos
                col += 1
        if k == 3:
            cell[:, col] = Nv + E * (k - 1) + np.arange(M)
        self.cell_dofs = cell
        self.n_dofs = Nv + E * (k - 1) + (M if k == 3 else 0)

        coords = np.empty((self.n_dofs, 2))
        coords[:Nv] = mesh.vertices
        a, b = mesh.vertices[mesh.edges[:, 0]], mesh.vertices[mesh.edges[:, 1]]
        for p in range(k - 1):
            t = (p + 1) / k
            coords[Nv + np.arange(E) * (k - 1) + p] = (1 - t) * a + t * b
        if k == 3:
            coords[Nv + E * 2:] = mesh.centroids()
        self.coords = coords

        d_edges = mesh.dirichlet_edges
        dd = [mesh.edges[d_edges].ravel()]
        for p in range(k - 1):
            dd.append(Nv + d_edges * (k - 1) + p)
        self.dirichlet = np.unique(np.concatenate(dd)) if len(d_edges) else np.zeros(0, np.int64)
        is_d = np.zeros(self.n_dofs, dtype=bool)
        is_d[self.dirichlet] = True
        self.free = np.flatnonzero(~is_d)

    def interpolate(self, fn: Field) -> np.ndarray:
        return np.asarray(fn(self.coords[:, 0], self.coords[:, 1]), dtype=float) * np.ones(self.n_dofs)


@dataclass
class CGSystem:
    """Reduced CG system over the free dofs plus what is needed to lift back."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dofmap: DofMap
    dirichlet_values: np.ndarray
    K: np.ndarray

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        u = np.zeros(self.dofmap.n_dofs)
        u[self.dofmap.free] = u_free
        u[self.dofmap.dirichlet] = self.dirichlet_values
        return u


@dataclass
class PressureSolution:
    """``p_h = p^c + sum_T alpha_T b_T``; ``alpha`` is zero for CG."""

    method: str
    k: int
    mesh: Mesh
    dofmap: DofMap
    coeffs: np.ndarray
    alpha: np.ndarray
    K: np.ndarray
    bubble: BubbleBasis | None = None
    reports: list = field(default_factory=list)

    def gradient(self, lam: np.ndarray, with_bubble: bool = True) -> np.ndarray:
        """Physical gradient at shared barycentric points, shape (M, npts, 2)."""
        lam = np.atleast_2d(lam)
        D = self.dofmap.basis.lambda_derivatives(lam)  # (q, n, m)
        u = self.coeffs[self.dofmap.cell_dofs]  # (M, n)
        g = np.einsum("en,qnm,emx->eqx", u, D, self.mesh.grad_lambda)
        if with_bubble and self.bubble is not None:
            _, gb = bubble_eval(self.bubble, lam, self.mesh.grad_lambda)
            g = g + self.alpha[:, None, None] * gb
        return g

    def value(self, lam: np.ndarray, with_bubble: bool = True) -> np.ndarray:
        lam = np.atleast_2d(lam)
        v = self.coeffs[self.dofmap.cell_dofs] @ self.dofmap.basis.values(lam).T
        if with_bubble and self.bubble is not None:
            vb, _ = bubble_eval(self.bubble, lam, self.mesh.grad_lambda)
            v = v + self.alpha[:, None] * vb
        return v

    def velocity(self, lam: np.ndarray) -> np.ndarray:
        return -self.K[:, None, None] * self.gradient(lam)

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_dofs + (self.mesh.n_elements if self.method == "EPG" else 0)


def _physical(mesh: Mesh, lam: np.ndarray) -> np.ndarray:
    """Physical coordinates (M, npts, 2) of shared barycentric points."""
    return np.einsum("qm,emx->eqx", lam, mesh.vertices[mesh.triangles])


def _edge_slots(mesh: Mesh):
    """For every edge: (element, local index) of side 0 and side 1 (-1 if none)."""
    E = mesh.n_edges
    loc = np.full((E, 2), -1, dtype=np.int64)
    M = mesh.n_elements
    for i in range(3):
        e = mesh.elem_edges[:, i]
        side = np.where(mesh.elem_edge_sign[:, i] > 0, 0, 1)
        loc[e, side] = i
    return mesh.edge_elems, loc


def assemble_cg(mesh: Mesh, k: int, data: ProblemData):
    """Stiffness and load of the CG method with Dirichlet dofs eliminated.

    Returns a :class:`CGSystem`; raises :class:`SingularSystemError` when the
    mesh has no Dirichlet edge.
    """
    if len(mesh.dirichlet_edges) == 0:
        raise SingularSystemError("no Dirichlet boundary: the CG system is singular")
    dm = DofMap(mesh, k)
    basis = dm.basis
    K = data.K(mesh)
    G = np.einsum("emx,enx->emn", mesh.grad_lambda, mesh.grad_lambda)
    local = np.einsum("e,emn,mnab->eab", K * mesh.area, G, basis.stiffness_reference())
    rows = np.repeat(dm.cell_dofs, basis.n_local, axis=1).ravel()
    cols = np.tile(dm.cell_dofs, (1, basis.n_local)).ravel()
    A = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(dm.n_dofs, dm.n_dofs))

    rule = quadrature("triangle", TRI_DEGREE)
    X = _physical(mesh, rule.points)
    fval = np.asarray(data.f(X[..., 0], X[..., 1]), float) * np.ones(X.shape[:2])
    phi = basis.values(rule.points)
    load = np.einsum("e,eq,q,qn->en", 2 * mesh.area, fval, rule.weights, phi)
    b = np.bincount(dm.cell_dofs.ravel(), weights=load.ravel(), minlength=dm.n_dofs)

    neu = mesh.neumann_edges
    if len(neu):
        er = quadrature("edge", EDGE_DEGREE)
        elem, loc = _edge_slots(mesh)
        for i in range(3):
            sel = neu[loc[neu, 0] == i]
            if not len(sel):
                continue
            T = elem[sel, 0]
            lam = edge_points(i, er.points)
            P = np.einsum("qm,emx->eqx", lam, mesh.vertices[mesh.triangles[T]])
            g = np.asarray(data.g_N(P[..., 0], P[..., 1]), float) * np.ones(P.shape[:2])
            contrib = np.einsum("e,eq,q,qn->en", mesh.edge_length[sel], g, er.weights, basis.values(lam))
            b -= np.bincount(dm.cell_dofs[T].ravel(), weights=contrib.ravel(), minlength=dm.n_dofs)

    uD = dm.interpolate(data.p_D)[dm.dirichlet]
    A = A.tocsr()
    Aff = A[dm.free][:, dm.free]
    rhs = b[dm.free] - A[dm.free][:, dm.dirichlet] @ uD
    return CGSystem(linalg.as_csr(Aff), rhs, dm, uD, K)


def solve_cg(mesh: Mesh, k: int, data: ProblemData, rtol: float = 1e-12) -> PressureSolution:
    system = assemble_cg(mesh, k, data)
    if system.matrix.shape[0] == 0:
        u_free, report = np.zeros(0), SolveReport("none", 0, 0.0, 0.0, True)
    else:
        u_free, report = linalg.solve_spd(system.matrix, system.rhs, rtol=rtol)
    if not report.converged:
        raise SolverError(f"CG pressure solve did not converge: {report}", report)
    return PressureSolution(
        "CG", k, mesh, system.dofmap, system.expand(u_free), np.zeros(mesh.n_elements),
        system.K, None, [report],
    )


def _side_traces(sol: PressureSolution, rule, with_bubble: bool = True) -> np.ndarray:
    """``-K grad p_h . n_out`` on each local edge, (M, 3, nq), global edge direction."""
    mesh = sol.mesh
    n_out = mesh.outward_normals()
    out = np.empty((mesh.n_elements, 3, len(rule.points)))
    for i in range(3):
        lam = edge_points(i, rule.points)
        g = sol.gradient(lam, with_bubble)
        v = -sol.K[:, None] * np.einsum("eqx,ex->eq", g, n_out[:, i])
        out[:, i] = np.where(sol.dofmap.aligned[:, i, None], v, v[:, ::-1])
    return out


def _edge_physical_points(mesh: Mesh, rule) -> np.ndarray:
    a = mesh.vertices[mesh.edges[:, 0]]
    b = mesh.vertices[mesh.edges[:, 1]]
    s = rule.points
    return a[:, None, :] * (1 - s)[None, :, None] + b[:, None, :] * s[None, :, None]


@dataclass
class FaceFluxField:
    """Integrated normal flux of the recovered velocity on every edge.

    ``flux[e]`` is ``int_e u_h . n_e``. Interior values are the average of
    the two one-sided traces, Dirichlet values are one-sided and Neumann
    values are the prescribed ``int_e g_N``.
    """

    mesh: Mesh
    flux: np.ndarray
    solution: PressureSolution | None = None

    @property
    def interior_flux(self) -> np.ndarray:
        return self.flux[self.mesh.interior_edges]

    @property
    def boundary_flux(self) -> np.ndarray:
        return self.flux[self.mesh.boundary_edges]

    def outward(self) -> np.ndarray:
        """(M, 3) flux leaving each element through local edge i."""
        return self.flux[self.mesh.elem_edges] * self.mesh.elem_edge_sign

    def element_velocity(self, lam: np.ndarray) -> np.ndarray:
        if self.solution is None:
            raise ValueError("flux field was not built from a pressure solution")
        return self.solution.velocity(lam)


def _neumann_flux(mesh: Mesh, data: ProblemData, rule) -> np.ndarray:
    neu = mesh.neumann_edges
    P = _edge_physical_points(mesh, rule)[neu]
    g = np.asarray(data.g_N(P[..., 0], P[..., 1]), float) * np.ones(P.shape[:2])
    return mesh.edge_length[neu] * (g @ rule.weights)


def recover_velocity(mesh: Mesh, solution: PressureSolution, data: ProblemData) -> FaceFluxField:
    rule = quadrature("edge", EDGE_DEGREE)
    side = np.einsum("etq,q->et", _side_traces(solution, rule), rule.weights)
    side *= mesh.edge_length[mesh.elem_edges]
    elem, loc = _edge_slots(mesh)
    flux = np.zeros(mesh.n_edges)
    inter = mesh.interior_edges
    f0 = side[elem[inter, 0], loc[inter, 0]]
    f1 = side[elem[inter, 1], loc[inter, 1]]
    flux[inter] = 0.5 * (f0 - f1)
    dd = mesh.dirichlet_edges
    flux[dd] = side[elem[dd, 0], loc[dd, 0]]
    flux[mesh.neumann_edges] = _neumann_flux(mesh, data, rule)
    return FaceFluxField(mesh, flux, solution)


def source_integrals(mesh: Mesh, f: Field) -> np.ndarray:
    rule = quadrature("triangle", TRI_DEGREE)
    X = _physical(mesh, rule.points)
    fv = np.asarray(f(X[..., 0], X[..., 1]), float) * np.ones(X.shape[:2])
    return 2 * mesh.area * (fv @ rule.weights)


def local_conservation_residual(mesh: Mesh, flux: FaceFluxField, f: Field):
    """Per-element ``sum of outward fluxes - int_T f`` and its max magnitude."""
    R = flux.outward().sum(axis=1) - source_integrals(mesh, f)
    return R, float(np.abs(R).max())


@dataclass
class BubbleSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    defect: np.ndarray  # int_T f - outward CG flux


def bubble_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Graph Laplacian with weight 1/2 per interior edge, plus 1 per Dirichlet edge."""
    M = mesh.n_elements
    t0, t1 = mesh.edge_elems[mesh.interior_edges].T
    dd = mesh.edge_elems[mesh.dirichlet_edges, 0]
    rows = np.concatenate([t0, t1, t0, t1, dd])
    cols = np.concatenate([t0, t1, t1, t0, dd])
    half = np.full(len(t0), 0.5)
    vals = np.concatenate([half, half, -half, -half, np.ones(len(dd))])
    A = linalg.as_csr(sp.coo_matrix((vals, (rows, cols)), shape=(M, M)))
    labels = connected_components(
        sp.coo_matrix((np.ones(len(t0)), (t0, t1)), shape=(M, M)), directed=False
    )[1]
    anchored = np.zeros(labels.max() + 1, dtype=bool)
    anchored[labels[dd]] = True
    if not anchored.all():
        raise SingularSystemError("a mesh component has no Dirichlet edge: bubble system is singular")
    return A


def assemble_bubble_correction(mesh: Mesh, k: int, data: ProblemData, p_c: PressureSolution) -> BubbleSystem:
    """System for the bubble amplitudes given the CG pressure.

    Each bubble sends flux -alpha_T out through every edge of its element
    (flux normalisation), so requiring zero conservation defect reads
    ``sum_{interior} (alpha_T - alpha_T')/2 + sum_{Dirichlet} alpha_T = -r_T``
    with ``r_T = int_T f - (outward CG flux of T)``.
    """
    cg_flux = recover_velocity(mesh, p_c, data)
    R, _ = local_conservation_residual(mesh, cg_flux, data.f)
    defect = -R
    return BubbleSystem(bubble_matrix(mesh), -defect, defect)


def solve_epg(mesh: Mesh, k: int, data: ProblemData, rtol: float = 1e-12,
              p_c: PressureSolution | None = None) -> PressureSolution:
    """Decoupled enriched solve: CG pressure, then bubble correction."""
    if p_c is None:
        p_c = solve_cg(mesh, k, data, rtol)
    system = assemble_bubble_correction(mesh, k, data, p_c)
    alpha, report = linalg.solve_spd(system.matrix, system.rhs, rtol=rtol)
    if not report.converged:
        raise SolverError(f"bubble correction solve did not converge: {report}", report)
    return PressureSolution(
        "EPG", k, mesh, p_c.dofmap, p_c.coeffs, alpha, p_c.K,
        BubbleBasis.build(mesh, k, p_c.K), p_c.reports + [report],
    )


def solve(mesh: Mesh, k: int, data: ProblemData, method: str = "epg", rtol: float = 1e-12) -> PressureSolution:
    method = method.lower()
    if method == "cg":
        return solve_cg(mesh, k, data, rtol)
    if method == "epg":
        return solve_epg(mesh, k, data, rtol)
    raise ValueError(f"unknown method {method!r}")


# --- monolithic oracle --------------------------------------------------------

@dataclass
class MonolithicSystem:
    """Dense square system over (free CG dofs, bubble amplitudes).

    ``full`` is the bilinear form evaluated on every (test, trial) pair of
    the unreduced spaces: trial = [all Lagrange dofs | bubbles], test =
    [all Lagrange dofs | element indicators].
    """

    matrix: np.ndarray
    rhs: np.ndarray
    full: np.ndarray
    load: np.ndarray
    dofmap: DofMap
    bubble: BubbleBasis
    dirichlet_values: np.ndarray
    K: np.ndarray

    @property
    def coupling_block(self) -> np.ndarray:
        """``a(b_T, phi_i)`` for free Lagrange test functions, shape (n_free, M)."""
        n = self.dofmap.n_dofs
        return self.full[np.ix_(self.dofmap.free, n + np.arange(len(self.K)))]


def assemble_monolithic_epg(mesh: Mesh, k: int, data: ProblemData) -> MonolithicSystem:
    """Evaluate the penalty-free bilinear form and load by quadrature.

    Dense and loop-based: intended for small meshes as an oracle. Volume
    terms ``int K grad u . grad v`` and skeleton terms
    ``-int {K grad u . n}[v] - int {K grad v . n}[u]`` over interior and
    Dirichlet edges are computed directly from basis traces. The Dirichlet
    datum in the load is the nodal interpolant, consistent with the
    strongly imposed lift.
    """
    if len(mesh.dirichlet_edges) == 0:
        raise SingularSystemError("no Dirichlet boundary")
    dm = DofMap(mesh, k)
    basis = dm.basis
    K = data.K(mesh)
    bub = BubbleBasis.build(mesh, k, K)
    M, n = mesh.n_elements, dm.n_dofs
    N = n + M
    A = np.zeros((N, N))  # rows: test, cols: trial
    load = np.zeros(N)

    tri = quadrature("triangle", TRI_DEGREE)
    w = 2 * mesh.area[:, None] * tri.weights[None, :]
    gL = basis.gradients(tri.points, mesh.grad_lambda)  # (M, q, n, 2)
    _, gB = bubble_eval(bub, tri.points, mesh.grad_lambda)  # (M, q, 2)
    X = _physical(mesh, tri.points)
    fval = np.asarray(data.f(X[..., 0], X[..., 1]), float) * np.ones(X.shape[:2])
    phi = basis.values(tri.points)
    for T in range(M):
        ids = dm.cell_dofs[T]
        kl = K[T] * np.einsum("q,qax,qbx->ab", w[T], gL[T], gL[T])
        A[np.ix_(ids, ids)] += kl
        A[ids, n + T] += K[T] * np.einsum("q,qax,qx->a", w[T], gL[T], gB[T])
        load[ids] += np.einsum("q,q,qa->a", w[T], fval[T], phi)
        load[n + T] += w[T] @ fval[T]

    er = quadrature("edge", EDGE_DEGREE)
    elem, loc = _edge_slots(mesh)
    uD_full = np.zeros(n)
    uD_full[dm.dirichlet] = dm.interpolate(data.p_D)[dm.dirichlet]
    P = _edge_physical_points(mesh, er)
    for e in range(mesh.n_edges):
        tag = mesh.edge_tag[e]
        ne = mesh.edge_normal[e]
        We = mesh.edge_length[e] * er.weights
        sides = [0] if tag != INTERIOR else [0, 1]
        if tag == NEUMANN:
            T, i = elem[e, 0], loc[e, 0]
            lam = edge_points(i, er.points)
            vals = basis.values(lam)
            if not dm.aligned[T, i]:
                vals = vals[::-1]
            g = np.asarray(data.g_N(P[e, :, 0], P[e, :, 1]), float) * np.ones(len(We))
            ids = dm.cell_dofs[T]
            load[ids] -= np.einsum("q,q,qa->a", We, g, vals)
            load[n + T] -= We @ g
            continue
        omega = 0.5 if tag == INTERIOR else 1.0
        tr_ids, te_ids, avg_u, jmp_u, avg_v, jmp_v = [], [], [], [], [], []
        for s in sides:
            T, i = elem[e, s], loc[e, s]
            sigma = 1.0 if s == 0 else -1.0
            lam = edge_points(i, er.points)
            vals = basis.values(lam)  # (q, n)
            dn = K[T] * basis.gradients(lam, mesh.grad_lambda[T:T + 1])[0] @ ne  # (q, n)
            _, gb = bubble_eval(
                BubbleBasis(k, bub.beta[T:T + 1], bub.gamma[T:T + 1]), lam, mesh.grad_lambda[T:T + 1]
            )
            dnb = K[T] * gb[0] @ ne
            if not dm.aligned[T, i]:
                vals, dn, dnb = vals[::-1], dn[::-1], dnb[::-1]
            nq = len(We)
            # trial functions on this side: Lagrange dofs, then the bubble
            tr_ids += list(dm.cell_dofs[T]) + [n + T]
            avg_u.append(np.column_stack([omega * dn, omega * dnb]))
            jmp_u.append(np.column_stack([sigma * vals, np.zeros(nq)]))
            # test functions: Lagrange dofs, then the indicator
            te_ids += list(dm.cell_dofs[T]) + [n + T]
            avg_v.append(np.column_stack([omega * dn, np.zeros(nq)]))
            jmp_v.append(np.column_stack([sigma * vals, sigma * np.ones(nq)]))
        avg_u, jmp_u = np.hstack(avg_u), np.hstack(jmp_u)
        avg_v, jmp_v = np.hstack(avg_v), np.hstack(jmp_v)
        loc_mat = -(np.einsum("q,qv,qu->vu", We, jmp_v, avg_u) + np.einsum("q,qv,qu->vu", We, avg_v, jmp_u))
        np.add.at(A, (np.array(te_ids)[:, None], np.array(tr_ids)[None, :]), loc_mat)
        if tag == DIRICHLET:
            # -int K grad v . n p_D with p_D replaced by the lift's trace
            T, i = elem[e, 0], loc[e, 0]
            lam = edge_points(i, er.points)
            vals = basis.values(lam)
            if not dm.aligned[T, i]:
                vals = vals[::-1]
            pD = vals @ uD_full[dm.cell_dofs[T]]
            dn = avg_v[:, : basis.n_local]  # omega = 1 on Dirichlet edges
            load[dm.cell_dofs[T]] -= np.einsum("q,qa,q->a", We, dn, pD)

    rows = np.concatenate([dm.free, n + np.arange(M)])
    cols = np.concatenate([dm.free, n + np.arange(M)])
    lift = np.zeros(N)
    lift[:n] = uD_full
    rhs = (load - A @ lift)[rows]
    return MonolithicSystem(A[np.ix_(rows, cols)], rhs, A, load, dm, bub, uD_full[dm.dirichlet], K)


def solve_monolithic(mesh: Mesh, k: int, data: ProblemData) -> PressureSolution:
    system = assemble_monolithic_epg(mesh, k, data)
    x = linalg.dense_solve(system.matrix, system.rhs)
    dm = system.dofmap
    nf = len(dm.free)
    coeffs = np.zeros(dm.n_dofs)
    coeffs[dm.free] = x[:nf]
    coeffs[dm.dirichlet] = system.dirichlet_values
    return PressureSolution("EPG", k, mesh, dm, coeffs, x[nf:], system.K, system.bubble)


# --- norms and errors ---------------------------------------------------------

@dataclass(frozen=True)
class ErrorNorms:
    energy: float
    velocity: float
    trace: float
    energy_norm: float  # ||K^1/2 grad p||
    velocity_norm: float  # ||u||

    @property
    def rel_energy(self) -> float:
        return self.energy / self.energy_norm

    @property
    def rel_velocity(self) -> float:
        return self.velocity / self.velocity_norm

    @property
    def rel_trace(self) -> float:
        return self.trace / self.velocity_norm


def energy_and_velocity_errors(mesh: Mesh, solution: PressureSolution, data: ProblemData) -> ErrorNorms:
    """Energy error with the Dirichlet ``h_e^-1`` term, L2 velocity error, face-trace error.

    The trace error compares the exact ``u . n_e`` with the recovered
    single-valued normal velocity (average of the two one-sided traces on
    interior edges, one-sided on Dirichlet edges).
    """
    if data.exact_p is None or data.exact_grad is None:
        raise ValueError("exact solution required")
    K = solution.K
    tri = quadrature("triangle", TRI_DEGREE)
    X = _physical(mesh, tri.points)
    gx, gy = data.exact_grad(X[..., 0], X[..., 1])
    g_exact = np.stack([np.broadcast_to(gx, X.shape[:2]), np.broadcast_to(gy, X.shape[:2])], axis=-1)
    diff = g_exact - solution.gradient(tri.points)
    w = 2 * mesh.area[:, None] * tri.weights[None, :]
    e_grad = np.einsum("eq,e,eqx->", w, K, diff**2)
    e_vel = np.einsum("eq,e,eqx->", w, K**2, diff**2)
    n_grad = np.einsum("eq,e,eqx->", w, K, g_exact**2)
    n_vel = np.einsum("eq,e,eqx->", w, K**2, g_exact**2)

    er = quadrature("edge", EDGE_DEGREE)
    P = _edge_physical_points(mesh, er)
    elem, loc = _edge_slots(mesh)
    dd = mesh.dirichlet_edges
    jump = 0.0
    if len(dd):
        vals = np.empty((len(dd), len(er.points)))
        for i in range(3):
            sel = loc[dd, 0] == i
            if not sel.any():
                continue
            T = elem[dd[sel], 0]
            v = solution.value(edge_points(i, er.points))[T]
            vals[sel] = np.where(solution.dofmap.aligned[T, i, None], v, v[:, ::-1])
        pe = data.exact_p(P[dd, :, 0], P[dd, :, 1])
        # h_e^-1 * |e| * sum_q w_q (.)^2 with h_e = |e|
        jump = float(np.sum(((pe - vals) ** 2) @ er.weights))

    traces = _side_traces(solution, er)
    inter = mesh.interior_edges
    un_h = np.zeros((mesh.n_edges, len(er.points)))
    un_h[inter] = 0.5 * (traces[elem[inter, 0], loc[inter, 0]] - traces[elem[inter, 1], loc[inter, 1]])
    un_h[dd] = traces[elem[dd, 0], loc[dd, 0]]
    ex, ey = data.exact_grad(P[..., 0], P[..., 1])
    Ke = np.where(mesh.edge_elems[:, 1] >= 0, 0.5 * (K[mesh.edge_elems[:, 0]] + K[np.maximum(mesh.edge_elems[:, 1], 0)]), K[mesh.edge_elems[:, 0]])
    un = -Ke[:, None] * (ex * mesh.edge_normal[:, 0, None] + ey * mesh.edge_normal[:, 1, None])
    faces = np.concatenate([inter, dd])
    trace = float(np.sum(mesh.edge_length[faces] * (((un - un_h)[faces] ** 2) @ er.weights)))
    return ErrorNorms(
        float(np.sqrt(e_grad + jump)), float(np.sqrt(e_vel)), float(np.sqrt(trace)),
        float(np.sqrt(n_grad)), float(np.sqrt(n_vel)),
    )


def bubble_energy_norm(mesh: Mesh, bubble: BubbleBasis, alpha: np.ndarray, K: np.ndarray) -> float:
    """``||K^1/2 grad p^b||`` for ``p^b = sum alpha_T b_T``."""
    tri = quadrature("triangle", TRI_DEGREE)
    _, g = bubble_eval(bubble, tri.points, mesh.grad_lambda)
    per = 2 * mesh.area * K * np.einsum("q,eqx->e", tri.weights, g**2)
    return float(np.sqrt(np.sum(alpha**2 * per)))


def bubble_jump_norm(mesh: Mesh, alpha: np.ndarray) -> float:
    """``(sum_e h_e^-1 ||[alpha]||_e^2)^1/2`` over interior and Dirichlet edges."""
    t0, t1 = mesh.edge_elems[mesh.interior_edges].T
    dd = mesh.edge_elems[mesh.dirichlet_edges, 0]
    return float(np.sqrt(np.sum((alpha[t0] - alpha[t1]) ** 2) + np.sum(alpha[dd] ** 2)))


def energy_norm_difference(a: PressureSolution, b: PressureSolution) -> tuple[float, float]:
    """``||K^1/2 grad (a - b)||`` and ``||K^1/2 grad b||`` on the same mesh."""
    tri = quadrature("triangle", TRI_DEGREE)
    mesh = a.mesh
    w = 2 * mesh.area[:, None] * tri.weights[None, :]
    ga, gb = a.gradient(tri.points), b.gradient(tri.points)
    d = np.einsum("eq,e,eqx->", w, a.K, (ga - gb) ** 2)
    nb = np.einsum("eq,e,eqx->", w, a.K, gb**2)
    return float(np.sqrt(d)), float(np.sqrt(nb))
