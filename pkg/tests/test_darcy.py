import numpy as np
import pytest

from epgflow.darcy import (
    DofMap, FaceFluxField, ProblemData, assemble_bubble_correction, assemble_cg,
    assemble_monolithic_epg, bubble_energy_norm, bubble_jump_norm, bubble_matrix,
    energy_and_velocity_errors, energy_norm_difference, local_conservation_residual,
    recover_velocity, solve_cg, solve_epg, solve_monolithic, source_integrals,
)
from epgflow.basis import BubbleBasis
from epgflow.linalg import SingularSystemError
from epgflow.mesh import DomainSpec, build_structured_mesh, unit_square
from epgflow.problems import PRESETS, preset


def square(level):
    return build_structured_mesh(unit_square(), level)


def linear(x, y):
    return 1.0 + 2.0 * x - 3.0 * y


@pytest.mark.parametrize("k", [1, 2, 3])
def test_linear_solution_reproduced_and_alpha_zero(k):
    mesh = square(2)
    data = ProblemData(p_D=linear)
    p_c = solve_cg(mesh, k, data)
    dm = p_c.dofmap
    assert np.abs(p_c.coeffs - linear(dm.coords[:, 0], dm.coords[:, 1])).max() < 1e-11
    epg = solve_epg(mesh, k, data, p_c=p_c)
    assert np.abs(epg.alpha).max() < 1e-11


def test_p1_reproduces_x():
    mesh = square(3)
    sol = solve_cg(mesh, 1, ProblemData(p_D=lambda x, y: x))
    assert np.abs(sol.coeffs - mesh.vertices[:, 0]).max() < 1e-11


def test_velocity_of_p_equals_x():
    mesh = square(2)
    data = ProblemData(p_D=lambda x, y: x)
    sol = solve_cg(mesh, 1, data)
    u = sol.velocity(np.array([[1 / 3, 1 / 3, 1 / 3]]))
    assert np.allclose(u[:, 0], [-1.0, 0.0])
    flux = recover_velocity(mesh, sol, data)
    vertical = np.flatnonzero(np.isclose(np.abs(mesh.edge_normal[:, 0]), 1.0))
    expect = -mesh.edge_length[vertical] * mesh.edge_normal[vertical, 0]
    assert np.allclose(flux.flux[vertical], expect, atol=1e-13)


def test_pure_neumann_is_singular():
    mesh = build_structured_mesh(DomainSpec("closed", ((0, 0),)), 1)
    with pytest.raises(SingularSystemError):
        assemble_cg(mesh, 1, ProblemData())
    with pytest.raises(SingularSystemError):
        bubble_matrix(mesh)


def test_bubble_matrix_structure():
    mesh = build_structured_mesh(PRESETS["example3"].spec(), 3)
    A = bubble_matrix(mesh).toarray()
    assert np.array_equal(A, A.T)
    n_int = np.zeros(mesh.n_elements)
    n_dir = np.zeros(mesh.n_elements)
    np.add.at(n_int, mesh.edge_elems[mesh.interior_edges].ravel(), 1)
    np.add.at(n_dir, mesh.edge_elems[mesh.dirichlet_edges, 0], 1)
    assert np.allclose(np.diag(A), 0.5 * n_int + n_dir)
    off = A - np.diag(np.diag(A))
    assert set(np.unique(off)) <= {-0.5, 0.0}
    assert np.allclose(A.sum(axis=1), n_dir)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_bubble_block_matches_quadrature(k):
    # 2-triangle square with the smooth data: the indicator/bubble block of the
    # directly assembled bilinear form is minus the bubble matrix
    mesh = square(0)
    data = preset("example1").data()
    system = assemble_monolithic_epg(mesh, k, data)
    n = system.dofmap.n_dofs
    block = system.full[n:, n:]
    assert np.allclose(block, -bubble_matrix(mesh).toarray(), atol=1e-13)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_coupling_block_vanishes(k):
    mesh = square(1)
    system = assemble_monolithic_epg(mesh, k, preset("example1").data())
    assert np.abs(system.coupling_block).max() <= 1e-12


@pytest.mark.parametrize("k", [1, 2, 3])
def test_monolithic_matches_decoupled(k):
    mesh = square(1)
    data = preset("example1").data()
    mono = solve_monolithic(mesh, k, data)
    dec = solve_epg(mesh, k, data)
    diff, norm = energy_norm_difference(dec, mono)
    assert diff <= 1e-8 * norm
    assert np.allclose(dec.alpha, mono.alpha, rtol=1e-8, atol=1e-12)


@pytest.mark.parametrize("name", sorted(PRESETS))
@pytest.mark.parametrize("k", [1, 2, 3])
def test_epg_locally_conservative(name, k):
    p = preset(name)
    mesh = build_structured_mesh(p.spec(), p.level)
    data = p.data()
    sol = solve_epg(mesh, k, data)
    flux = recover_velocity(mesh, sol, data)
    R, rmax = local_conservation_residual(mesh, flux, data.f)
    scale = max(1.0, np.abs(source_integrals(mesh, data.f)).sum())
    assert rmax <= 1e-10 * scale
    # global telescoping: boundary net outflow minus total source
    net = flux.outward().sum(axis=1).sum()
    bnd = flux.flux[mesh.boundary_edges].sum()
    assert abs(net - bnd) < 1e-12
    assert abs(R.sum() - (bnd - source_integrals(mesh, data.f).sum())) < 1e-12


def test_cg_residual_equals_bubble_defect():
    mesh = square(3)
    data = preset("example1").data()
    p_c = solve_cg(mesh, 2, data)
    R, _ = local_conservation_residual(mesh, recover_velocity(mesh, p_c, data), data.f)
    system = assemble_bubble_correction(mesh, 2, data, p_c)
    assert np.allclose(system.defect, -R, atol=1e-15)
    assert np.allclose(system.rhs, R, atol=1e-15)


def test_bubble_flux_closed_form(rng):
    mesh = square(2)
    p_c = solve_cg(mesh, 2, ProblemData())
    alpha = rng.standard_normal(mesh.n_elements)
    sol = solve_epg(mesh, 2, ProblemData(), p_c=p_c)
    sol.alpha = alpha
    flux = recover_velocity(mesh, sol, ProblemData()).flux
    inter = mesh.interior_edges
    t0, t1 = mesh.edge_elems[inter].T
    assert np.allclose(flux[inter], -0.5 * (alpha[t0] - alpha[t1]), atol=1e-12)
    dd = mesh.dirichlet_edges
    assert np.allclose(flux[dd], -alpha[mesh.edge_elems[dd, 0]], atol=1e-12)


def test_alpha_linear_in_dirichlet_data():
    p = preset("example2")
    mesh = build_structured_mesh(p.spec(), p.level)
    data = p.data()
    a1 = solve_epg(mesh, 2, data).alpha
    a2 = solve_epg(mesh, 2, ProblemData(p_D=lambda x, y: 2 * data.p_D(x, y))).alpha
    assert np.allclose(a2, 2 * a1, rtol=1e-9, atol=1e-13)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_errors_vanish_for_polynomial_in_space(k):
    mesh = square(2)
    p = lambda x, y: (1 + x - 2 * y) ** k
    grad = lambda x, y: (k * (1 + x - 2 * y) ** (k - 1), -2 * k * (1 + x - 2 * y) ** (k - 1))
    f = lambda x, y: -5 * k * (k - 1) * (1 + x - 2 * y) ** max(k - 2, 0) * np.ones_like(x)
    data = ProblemData(f=f, p_D=p, exact_p=p, exact_grad=grad)
    sol = solve_cg(mesh, k, data)
    sol.coeffs = sol.dofmap.interpolate(p)
    err = energy_and_velocity_errors(mesh, sol, data)
    assert err.energy <= 1e-10 and err.velocity <= 1e-10 and err.trace <= 1e-10


def test_zero_flux_zero_residual():
    mesh = square(2)
    R, rmax = local_conservation_residual(mesh, FaceFluxField(mesh, np.zeros(mesh.n_edges)), ProblemData().f)
    assert rmax == 0.0 and not R.any()


def test_norm_equivalence_random_alpha(rng):
    ratios = []
    for level in (2, 3, 4, 5):
        mesh = square(level)
        for k in (1, 2, 3):
            bub = BubbleBasis.build(mesh, k, np.ones(mesh.n_elements))
            for _ in range(3):
                a = rng.standard_normal(mesh.n_elements)
                ratios.append(bubble_energy_norm(mesh, bub, a, np.ones(mesh.n_elements)) / bubble_jump_norm(mesh, a))
    assert max(ratios) / min(ratios) < 100


def test_indicator_coercivity(rng):
    mesh = square(2)
    system = assemble_monolithic_epg(mesh, 2, preset("example1").data())
    n = system.dofmap.n_dofs
    B = system.full[n:, n:]  # B[T, T'] = a(b_T', 1_T)
    t0, t1 = mesh.edge_elems[mesh.interior_edges].T
    dd = mesh.edge_elems[mesh.dirichlet_edges, 0]
    for _ in range(100):
        q0 = rng.standard_normal(mesh.n_elements)
        value = q0 @ B @ (-q0)
        bound = 0.5 * (np.sum((q0[t0] - q0[t1]) ** 2) + np.sum(q0[dd] ** 2))
        assert value >= bound - 1e-12


def test_dofmap_counts():
    mesh = square(2)
    nv, ne, m = len(mesh.vertices), mesh.n_edges, mesh.n_elements
    assert [DofMap(mesh, k).n_dofs for k in (1, 2, 3)] == [nv, nv + ne, nv + 2 * ne + m]
