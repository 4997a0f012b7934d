"""Structured triangular meshes with oriented edge topology and boundary tags.

Every mesh is built from unit-square cells; each cell is split into an
``n x n`` grid of squares and every square is cut along its (0,0)-(1,1)
diagonal. Edge records carry a unit normal that points out of the first
adjacent element (``edge_elems[:, 0]``). For interior edges that element is
the lower-indexed one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

TAG_NAMES = {DIRICHLET: "D", NEUMANN: "N"}
TAG_CODES = {"D": DIRICHLET, "N": NEUMANN}

GEOM_TOL = 1e-12


class MeshError(ValueError):
    """Invalid mesh input or a mesh that violates a structural invariant."""


Segment = tuple[tuple[float, float], tuple[float, float]]


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle with its own conductivity."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float
    conductivity: float

    def contains(self, x, y, tol: float = GEOM_TOL):
        return (
            (x >= self.xmin - tol)
            & (x <= self.xmax + tol)
            & (y >= self.ymin - tol)
            & (y <= self.ymax + tol)
        )


@dataclass(frozen=True)
class DomainSpec:
    """Geometry, conductivity map and boundary assignment of a test domain.

    ``cells`` lists the unit squares ``[i, i+1] x [j, j+1]`` making up the
    domain. Boundary segments listed in ``dirichlet`` carry the pressure
    value given next to them; every other boundary edge is Neumann.
    """

    shape: str
    cells: tuple[tuple[int, int], ...]
    base_conductivity: float = 1.0
    regions: tuple[Region, ...] = ()
    dirichlet: tuple[tuple[Segment, float], ...] = ()
    # every region edge must fall on multiples of 1/align
    align: int = 1

    def __post_init__(self):
        if self.base_conductivity <= 0 or any(r.conductivity <= 0 for r in self.regions):
            raise MeshError("conductivity must be positive everywhere")

    def conductivity(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        K = np.full(np.broadcast(x, y).shape, self.base_conductivity)
        for region in self.regions:
            K = np.where(region.contains(x, y), region.conductivity, K)
        return K

    def dirichlet_value(self, x, y) -> np.ndarray:
        """Piecewise-constant Dirichlet datum; zero off the Dirichlet segments."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(x, y).shape)
        for seg, value in self.dirichlet:
            out = np.where(on_segment(x, y, seg), value, out)
        return out

    def is_dirichlet(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        hit = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for seg, _ in self.dirichlet:
            hit |= on_segment(x, y, seg)
        return hit


def on_segment(x, y, seg: Segment, tol: float = GEOM_TOL) -> np.ndarray:
    (x0, y0), (x1, y1) = seg
    dx, dy = x1 - x0, y1 - y0
    length2 = dx * dx + dy * dy
    t = ((x - x0) * dx + (y - y0) * dy) / length2
    cross = np.abs((x - x0) * dy - (y - y0) * dx) / np.sqrt(length2)
    return (cross <= tol) & (t >= -tol) & (t <= 1 + tol)


def unit_square(dirichlet_everywhere: bool = True) -> DomainSpec:
    segs = ()
    if dirichlet_everywhere:
        corners = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
        segs = tuple(((corners[i], corners[(i + 1) % 4]), 0.0) for i in range(4))
    return DomainSpec("unit_square", ((0, 0),), dirichlet=segs)


def ten_shape() -> DomainSpec:
    """Five unit squares arranged as a cross centred at (3/2, 3/2)."""
    return DomainSpec(
        "ten_shape",
        ((1, 0), (0, 1), (1, 1), (2, 1), (1, 2)),
        regions=(Region(1.25, 1.75, 1.25, 1.75, 1e-2),),
        dirichlet=(
            (((0.0, 1.0), (0.0, 2.0)), 1.0),
            (((3.0, 1.0), (3.0, 2.0)), 0.0),
            (((1.0, 0.0), (2.0, 0.0)), 0.0),
            (((1.0, 3.0), (2.0, 3.0)), 0.0),
        ),
        align=4,
    )


def l_shape() -> DomainSpec:
    """``[0,2]^2`` minus its upper-right unit square, two low-K blocks."""
    return DomainSpec(
        "l_shape",
        ((0, 0), (1, 0), (0, 1)),
        regions=(
            Region(0.25, 0.75, 0.25, 0.75, 1e-2),
            Region(0.25, 0.75, 1.25, 1.75, 1e-2),
        ),
        dirichlet=(
            (((0.0, 1.0), (0.0, 2.0)), 1.0),
            (((2.0, 0.0), (2.0, 1.0)), 0.0),
        ),
        align=4,
    )


DOMAINS: dict[str, Callable[[], DomainSpec]] = {
    "unit_square": unit_square,
    "ten_shape": ten_shape,
    "l_shape": l_shape,
}


@dataclass(eq=False)
class Mesh:
    """Conforming triangulation with edge topology.

    Parameters
    ----------
    vertices : (Nv, 2) float array
    triangles : (M, 3) int array, counterclockwise
    boundary_tags : mapping ``(i0, i1) -> tag`` for every boundary edge
        (vertex order irrelevant), tag in {DIRICHLET, NEUMANN}
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_tags: dict = field(repr=False)
    spec: DomainSpec | None = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        tags = {}
        for (a, b), t in self.boundary_tags.items():
            tags[(min(a, b), max(a, b))] = int(t)
        self.boundary_tags = tags
        self._build_topology()
        for name in (
            "vertices", "triangles", "area", "edges", "edge_elems", "edge_normal",
            "edge_length", "edge_tag", "elem_edges", "elem_edge_sign", "grad_lambda",
        ):
            getattr(self, name).setflags(write=False)

    def _build_topology(self):
        V, T = self.vertices, self.triangles
        p0, p1, p2 = V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]
        d1, d2 = p1 - p0, p2 - p0
        area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if np.any(area <= 0):
            bad = int(np.argmin(area))
            raise MeshError(f"element {bad} has non-positive area {area[bad]:.3e}")
        self.area = area

        # local edge i is opposite local vertex i
        M = len(T)
        loc = np.stack([T[:, [1, 2]], T[:, [2, 0]], T[:, [0, 1]]], axis=1)  # (M,3,2)
        key = np.sort(loc.reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        if np.any(counts > 2):
            raise MeshError("non-manifold edge shared by more than two elements")
        E = len(edges)
        elem_of = np.repeat(np.arange(M), 3)
        order = np.lexsort((elem_of, inverse))
        inv_sorted, elem_sorted = inverse[order], elem_of[order]
        starts = np.r_[True, inv_sorted[1:] != inv_sorted[:-1]]
        first = np.full(E, -1, dtype=np.int64)
        second = np.full(E, -1, dtype=np.int64)
        first[inv_sorted[starts]] = elem_sorted[starts]
        second[inv_sorted[~starts]] = elem_sorted[~starts]
        self.edges = edges.astype(np.int64)
        self.edge_elems = np.stack([first, second], axis=1)
        self.elem_edges = inverse.reshape(M, 3).astype(np.int64)
        self.elem_edge_sign = np.where(
            self.edge_elems[self.elem_edges, 0] == np.arange(M)[:, None], 1.0, -1.0
        )

        a, b = V[edges[:, 0]], V[edges[:, 1]]
        t = b - a
        length = np.hypot(t[:, 0], t[:, 1])
        n = np.stack([t[:, 1], -t[:, 0]], axis=1) / length[:, None]
        # orient n out of the owning element: opposite vertex must lie behind it
        owner = first
        local = np.argmax(self.elem_edges[owner] == np.arange(E)[:, None], axis=1)
        opp = V[T[owner, local]]
        flip = np.einsum("ij,ij->i", opp - a, n) > 0
        n[flip] *= -1
        self.edge_normal = n
        self.edge_length = length

        tag = np.zeros(E, dtype=np.int64)
        boundary = second < 0
        for e in np.flatnonzero(boundary):
            k = (int(edges[e, 0]), int(edges[e, 1]))
            if k not in self.boundary_tags:
                raise MeshError(f"boundary edge {k} has no tag")
            tag[e] = self.boundary_tags[k]
        extra = set(self.boundary_tags) - {tuple(map(int, edges[e])) for e in np.flatnonzero(boundary)}
        if extra:
            raise MeshError(f"tagged edges are not on the boundary: {sorted(extra)[:3]}")
        self.edge_tag = tag

        # gradients of barycentric coordinates, (M, 3, 2)
        g = np.empty((M, 3, 2))
        for i in range(3):
            pj, pk = V[T[:, (i + 1) % 3]], V[T[:, (i + 2) % 3]]
            g[:, i, 0] = (pj[:, 1] - pk[:, 1]) / (2 * area)
            g[:, i, 1] = (pk[:, 0] - pj[:, 0]) / (2 * area)
        self.grad_lambda = g

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_tag == INTERIOR)

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_tag != INTERIOR)

    @property
    def dirichlet_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_tag == DIRICHLET)

    @property
    def neumann_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_tag == NEUMANN)

    @property
    def interior_faces(self):
        """``(T_i, T_j, normal, length)`` for every interior edge; normal leaves ``T_i``."""
        e = self.interior_edges
        return self.edge_elems[e, 0], self.edge_elems[e, 1], self.edge_normal[e], self.edge_length[e]

    @property
    def boundary_faces(self):
        """``(owner, outward normal, length, tag)`` for every boundary edge."""
        e = self.boundary_edges
        return self.edge_elems[e, 0], self.edge_normal[e], self.edge_length[e], self.edge_tag[e]

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def diameters(self) -> np.ndarray:
        V, T = self.vertices, self.triangles
        return np.max(
            [np.linalg.norm(V[T[:, i]] - V[T[:, (i + 1) % 3]], axis=1) for i in range(3)], axis=0
        )

    def h(self) -> float:
        return float(self.diameters().max())

    def outward_normals(self) -> np.ndarray:
        """(M, 3, 2) outward unit normal of local edge i of each element."""
        return self.edge_normal[self.elem_edges] * self.elem_edge_sign[..., None]

    def closure_defect(self) -> np.ndarray:
        """Per-element ``|sum_e |e| n_out|``; zero for a closed polygon."""
        s = np.einsum("mi,mij->mj", self.edge_length[self.elem_edges], self.outward_normals())
        return np.linalg.norm(s, axis=1)

    def conductivity(self) -> np.ndarray:
        if self.spec is None:
            return np.ones(self.n_elements)
        c = self.centroids()
        return self.spec.conductivity(c[:, 0], c[:, 1])

    def check(self) -> None:
        """Raise :class:`MeshError` if a structural invariant is violated."""
        counts = np.bincount(self.edge_elems[self.edge_elems >= 0], minlength=self.n_elements)
        if np.any(counts != 3):
            raise MeshError("every element must own exactly three edge slots")
        perim = self.edge_length[self.elem_edges].sum(axis=1)
        if np.any(self.closure_defect() > 1e-12 * perim):
            raise MeshError("element boundary does not close")
        if len(self.dirichlet_edges) == 0:
            raise MeshError("Dirichlet boundary is empty")


def _grid_triangles(n_x: int, n_y: int, active: np.ndarray):
    """Split every active grid square into two CCW triangles."""
    vid = np.arange((n_x + 1) * (n_y + 1)).reshape(n_y + 1, n_x + 1)
    tris = []
    for j in range(n_y):
        for i in range(n_x):
            if not active[j, i]:
                continue
            v00, v10 = vid[j, i], vid[j, i + 1]
            v01, v11 = vid[j + 1, i], vid[j + 1, i + 1]
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return np.array(tris, dtype=np.int64)


def _tag_boundary(vertices, triangles, spec: DomainSpec | None) -> dict:
    loc = np.concatenate([triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]])
    key = np.sort(loc, axis=1)
    uniq, counts = np.unique(key, axis=0, return_counts=True)
    bnd = uniq[counts == 1]
    mid = 0.5 * (vertices[bnd[:, 0]] + vertices[bnd[:, 1]])
    if spec is None:
        is_d = np.ones(len(bnd), dtype=bool)
    else:
        is_d = spec.is_dirichlet(mid[:, 0], mid[:, 1])
    return {(int(a), int(b)): (DIRICHLET if d else NEUMANN) for (a, b), d in zip(bnd, is_d)}


def build_structured_mesh(spec: DomainSpec, level: int) -> Mesh:
    """Uniform mesh with ``2**level`` squares per unit length (2 triangles each).

    Unit square: level 4 gives 512 elements, level 7 gives 32768. Ten-shape
    and L-shape need level >= 2 so the low-permeability blocks align with
    element edges; level 3 gives 640 / 384 elements, level 6 gives
    40960 / 24576.
    """
    if level < 0 or int(level) != level:
        raise MeshError(f"level must be a non-negative integer, got {level}")
    n = 2 ** int(level)
    if n % spec.align:
        raise MeshError(
            f"level {level} gives {n} cells per unit length; {spec.shape} needs a multiple of {spec.align}"
        )
    cells = np.array(spec.cells)
    nx_c, ny_c = cells[:, 0].max() + 1, cells[:, 1].max() + 1
    n_x, n_y = nx_c * n, ny_c * n
    active = np.zeros((n_y, n_x), dtype=bool)
    for ci, cj in spec.cells:
        active[cj * n:(cj + 1) * n, ci * n:(ci + 1) * n] = True
    tris = _grid_triangles(n_x, n_y, active)
    xs, ys = np.meshgrid(np.arange(n_x + 1) / n, np.arange(n_y + 1) / n)
    verts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    used = np.unique(tris)
    renum = np.full(len(verts), -1, dtype=np.int64)
    renum[used] = np.arange(len(used))
    verts, tris = verts[used], renum[tris]
    return Mesh(verts, tris, _tag_boundary(verts, tris, spec), spec)


def uniform_refine(mesh: Mesh) -> Mesh:
    """Split each triangle into four by its edge midpoints; tags are inherited."""
    Nv = len(mesh.vertices)
    mid = Nv + mesh.elem_edges  # midpoint vertex of local edge i
    verts = np.concatenate([mesh.vertices, mesh.edge_midpoints()])
    T = mesh.triangles
    m0, m1, m2 = mid[:, 0], mid[:, 1], mid[:, 2]
    children = np.stack(
        [
            np.stack([T[:, 0], m2, m1], axis=1),
            np.stack([m2, T[:, 1], m0], axis=1),
            np.stack([m1, m0, T[:, 2]], axis=1),
            np.stack([m0, m1, m2], axis=1),
        ],
        axis=1,
    ).reshape(-1, 3)
    tags = {}
    for e in mesh.boundary_edges:
        a, b = mesh.edges[e]
        m = Nv + e
        tags[(int(a), int(m))] = tags[(int(m), int(b))] = int(mesh.edge_tag[e])
    return Mesh(verts, children, tags, mesh.spec)


def classify_inflow_outflow(mesh: Mesh, boundary_flux: np.ndarray) -> np.ndarray:
    """Boolean mask over ``mesh.boundary_edges``: True where the face is inflow.

    ``boundary_flux`` holds the integrated outward flux of each boundary
    edge (same order as ``mesh.boundary_edges``); zero counts as outflow.
    """
    return np.asarray(boundary_flux) < 0


def region_aligned(mesh: Mesh) -> bool:
    """True if every element sits inside one conductivity region."""
    if mesh.spec is None:
        return True
    V = mesh.vertices[mesh.triangles]
    c = mesh.centroids()
    K_c = mesh.spec.conductivity(c[:, 0], c[:, 1])
    for i in range(3):
        # nudge vertices toward the centroid to avoid ties on region edges
        p = V[:, i] + 1e-9 * (c - V[:, i])
        if np.any(mesh.spec.conductivity(p[:, 0], p[:, 1]) != K_c):
            return False
    return True


def from_arrays(
    vertices: Sequence, triangles: Sequence, boundary: Sequence[tuple[int, int, int]],
    spec: DomainSpec | None = None,
) -> Mesh:
    tags = {(int(a), int(b)): int(t) for a, b, t in boundary}
    return Mesh(np.asarray(vertices, float), np.asarray(triangles, np.int64), tags, spec)
