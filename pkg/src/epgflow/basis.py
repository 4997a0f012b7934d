"""Reference-element machinery: quadrature, Lagrange bases and the flux bubble.

All polynomials live in barycentric coordinates ``lam = (l1, l2, l3)``.
Physical gradients follow from ``grad phi = sum_m dphi/dlam_m * grad lam_m``
with the per-element ``grad_lambda`` array stored on the mesh.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial

import numpy as np
from scipy.special import roots_jacobi

MAX_TRIANGLE_DEGREE = 40
MAX_EDGE_DEGREE = 40


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights on the reference triangle or the unit interval.

    Triangle points are barycentric triples and the weights sum to 1/2.
    Edge points are parameters ``s`` in [0, 1] and the weights sum to 1.
    """

    domain: str
    degree: int
    points: np.ndarray
    weights: np.ndarray


@lru_cache(maxsize=None)
def quadrature(domain: str, degree: int) -> QuadratureRule:
    """Gauss rule exact for polynomials of total degree ``degree``.

    Edges use Gauss-Legendre. Triangles use the collapsed (Duffy) product of
    Gauss-Jacobi(1, 0) and Gauss-Legendre, which is exact to degree 2n-1 in
    each collapsed variable. Edge points are symmetric under ``s -> 1 - s``
    with reversed ordering; traces from the two sides of an edge rely on it.
    """
    n = max(1, -(-(degree + 1) // 2))
    if domain == "edge":
        if degree > MAX_EDGE_DEGREE or degree < 0:
            raise ValueError(f"unsupported edge quadrature degree {degree}")
        t, w = np.polynomial.legendre.leggauss(n)
        rule = QuadratureRule("edge", degree, 0.5 * (t + 1), 0.5 * w)
    elif domain == "triangle":
        if degree > MAX_TRIANGLE_DEGREE or degree < 0:
            raise ValueError(f"unsupported triangle quadrature degree {degree}")
        tu, wu = roots_jacobi(n, 1.0, 0.0)
        tv, wv = np.polynomial.legendre.leggauss(n)
        u = 0.5 * (tu + 1)
        v = 0.5 * (tv + 1)
        U, Vv = np.meshgrid(u, v, indexing="ij")
        W = np.outer(wu * 0.25, wv * 0.5)
        x = U.ravel()
        y = ((1 - U) * Vv).ravel()
        pts = np.stack([1 - x - y, x, y], axis=1)
        rule = QuadratureRule("triangle", degree, pts, W.ravel())
    else:
        raise ValueError(f"unknown quadrature domain {domain!r}")
    rule.points.setflags(write=False)
    rule.weights.setflags(write=False)
    return rule


def monomial_integral(exponents, area: float = 0.5) -> float:
    """Exact ``int_T l1^a l2^b l3^c`` over a triangle of the given area."""
    a, b, c = exponents
    return factorial(a) * factorial(b) * factorial(c) * 2.0 * area / factorial(a + b + c + 2)


def edge_points(local_edge: int, s: np.ndarray) -> np.ndarray:
    """Barycentric points on local edge i, running from vertex i+1 to i+2."""
    s = np.asarray(s, dtype=float)
    lam = np.zeros((len(s), 3))
    lam[:, (local_edge + 1) % 3] = 1 - s
    lam[:, (local_edge + 2) % 3] = s
    return lam


class LagrangeBasis:
    """Nodal P_k basis on a triangle, k in {1, 2, 3}.

    Nodes are ordered vertices first, then the k-1 nodes of each local edge
    (edge i runs from vertex i+1 to vertex i+2), then interior nodes.
    """

    def __init__(self, k: int):
        if k not in (1, 2, 3):
            raise ValueError(f"degree must be 1, 2 or 3, got {k}")
        self.k = k
        nodes = [tuple(k if m == i else 0 for m in range(3)) for i in range(3)]
        for i in range(3):
            j, l = (i + 1) % 3, (i + 2) % 3
            for s in range(1, k):
                a = [0, 0, 0]
                a[j], a[l] = k - s, s
                nodes.append(tuple(a))
        if k == 3:
            nodes.append((1, 1, 1))
        self.nodes = np.array(nodes, dtype=np.int64)
        self.n_local = len(nodes)

    def __repr__(self):
        return f"LagrangeBasis(k={self.k})"

    @property
    def node_points(self) -> np.ndarray:
        return self.nodes / self.k

    def _factor(self, t, a):
        # prod_{s<a} (k t - s)/(s+1) and its derivative in t
        val = np.ones_like(t)
        der = np.zeros_like(t)
        for s in range(a):
            f = (self.k * t - s) / (s + 1)
            der = der * f + val * self.k / (s + 1)
            val = val * f
        return val, der

    def values(self, lam: np.ndarray) -> np.ndarray:
        lam = np.atleast_2d(lam)
        out = np.ones((len(lam), self.n_local))
        for n, a in enumerate(self.nodes):
            for m in range(3):
                out[:, n] *= self._factor(lam[:, m], a[m])[0]
        return out

    def lambda_derivatives(self, lam: np.ndarray) -> np.ndarray:
        """``d phi_n / d lam_m`` as an array of shape (npts, n_local, 3)."""
        lam = np.atleast_2d(lam)
        out = np.zeros((len(lam), self.n_local, 3))
        for n, a in enumerate(self.nodes):
            f = [self._factor(lam[:, m], a[m]) for m in range(3)]
            for m in range(3):
                d = f[m][1].copy()
                for q in range(3):
                    if q != m:
                        d *= f[q][0]
                out[:, n, m] = d
        return out

    def gradients(self, lam: np.ndarray, grad_lambda: np.ndarray) -> np.ndarray:
        """Physical gradients, shape (M, npts, n_local, 2)."""
        return np.einsum("qnm,emx->eqnx", self.lambda_derivatives(lam), grad_lambda)

    @lru_cache(maxsize=None)
    def stiffness_reference(self) -> np.ndarray:
        """``S[m, n, a, b] = int_T dphi_a/dlam_m dphi_b/dlam_n / |T|``."""
        rule = quadrature("triangle", max(2 * (self.k - 1), 0))
        D = self.lambda_derivatives(rule.points)
        return 2.0 * np.einsum("q,qam,qbn->mnab", rule.weights, D, D)


# --- bubble -------------------------------------------------------------------

BUBBLE_CORE = (2, 2, 2)


def n_gamma(k: int) -> int:
    """Number of interior correction terms, C(k, 2) in two dimensions."""
    return comb(k, 2)


def psi_exponents(k: int) -> list[tuple[int, int, int]]:
    """Barycentric monomial basis of P_{k-2}: {1} for k=2, {1, l1, l2} for k=3."""
    if k <= 1:
        return []
    if k == 2:
        return [(0, 0, 0)]
    if k == 3:
        return [(0, 0, 0), (1, 0, 0), (0, 1, 0)]
    raise ValueError(f"bubble degree k={k} not supported")


def bubble_terms(k: int) -> list[tuple[int, int, int]]:
    """Exponents of the monomials making up b_T: three one-sided terms, then J interior."""
    terms = []
    for i in range(3):
        a = list(BUBBLE_CORE)
        a[i] -= 1
        terms.append(tuple(a))
    for p in psi_exponents(k):
        terms.append(tuple(c + q for c, q in zip(BUBBLE_CORE, p)))
    return terms


def compute_beta(mesh_or_area, edge_length=None, K=None) -> np.ndarray:
    """Flux-normalising coefficients, shape (M, 3).

    Closed form ``beta_i = -60 |T| / (K |e_i|^2)``; the flux of each
    one-sided term through its own edge is then exactly one.

    Accepts either a mesh (plus optional K array) or explicit
    ``(area, edge_length, K)`` arrays with ``edge_length`` of shape (M, 3).
    """
    if edge_length is None:
        mesh = mesh_or_area
        area = mesh.area
        edge_length = mesh.edge_length[mesh.elem_edges]
        K = mesh.conductivity() if K is None else K
    else:
        area = mesh_or_area
    area = np.asarray(area, dtype=float)
    K = np.broadcast_to(np.asarray(K, dtype=float), area.shape)
    return -60.0 * area[:, None] / (K[:, None] * np.asarray(edge_length) ** 2)


@lru_cache(maxsize=None)
def _gamma_reference(k: int):
    psis = psi_exponents(k)
    J = len(psis)
    gram = np.empty((J, J))
    for i, pi in enumerate(psis):
        for j, pj in enumerate(psis):
            gram[i, j] = monomial_integral(np.add(np.add(BUBBLE_CORE, pi), pj), area=1.0)
    side = np.empty((3, J))
    one_sided = bubble_terms(k)[:3]
    for i, a in enumerate(one_sided):
        for l, pl in enumerate(psis):
            side[i, l] = monomial_integral(np.add(a, pl), area=1.0)
    return gram, side


def compute_gamma(beta: np.ndarray, k: int) -> np.ndarray:
    """Interior coefficients (M, J) making b_T orthogonal to P_{k-2}(T).

    Solves ``m_ij gamma_j = -(sum_i b_{T,i}, psi_l)`` per element. K and |T|
    scale both sides equally, so only the reference Gram matrix is needed.
    """
    J = n_gamma(k) if k >= 2 else 0
    beta = np.atleast_2d(beta)
    if J == 0:
        return np.zeros((len(beta), 0))
    gram, side = _gamma_reference(k)
    rhs = -beta @ side  # (M, J)
    return np.linalg.solve(gram, rhs.T).T


@dataclass(frozen=True)
class BubbleBasis:
    """Per-element bubble coefficients; ``coefficients`` follows :func:`bubble_terms`."""

    k: int
    beta: np.ndarray
    gamma: np.ndarray

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate([self.beta, self.gamma], axis=1)

    @property
    def terms(self):
        return bubble_terms(self.k)

    @classmethod
    def build(cls, mesh, k: int, K=None) -> "BubbleBasis":
        beta = compute_beta(mesh, K=K)
        return cls(k, beta, compute_gamma(beta, k))


def _monomials(lam: np.ndarray, terms):
    lam = np.atleast_2d(lam)
    vals = np.empty((len(lam), len(terms)))
    ders = np.empty((len(lam), len(terms), 3))
    for t, a in enumerate(terms):
        pw = [lam[:, m] ** a[m] for m in range(3)]
        vals[:, t] = pw[0] * pw[1] * pw[2]
        for m in range(3):
            d = a[m] * lam[:, m] ** max(a[m] - 1, 0) if a[m] else np.zeros(len(lam))
            ders[:, t, m] = d * pw[(m + 1) % 3] * pw[(m + 2) % 3]
    return vals, ders


def bubble_eval(basis: BubbleBasis, lam: np.ndarray, grad_lambda: np.ndarray):
    """Values (M, npts) and physical gradients (M, npts, 2) of b_T.

    ``lam`` is a shared (npts, 3) array of barycentric points;
    ``grad_lambda`` is (M, 3, 2).
    """
    vals, ders = _monomials(lam, basis.terms)
    c = basis.coefficients
    value = c @ vals.T
    dlam = np.einsum("et,qtm->eqm", c, ders)
    grad = np.einsum("eqm,emx->eqx", dlam, grad_lambda)
    return value, grad
