import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epgflow import transport
from epgflow.darcy import FaceFluxField, recover_velocity, solve_epg
from epgflow.linalg import MMatrixError, MMatrixSolver
from epgflow.mesh import build_structured_mesh, unit_square
from epgflow.problems import preset
from epgflow.transport import (
    CFLViolation, TransportConfig, assemble_implicit_matrix, check_cfl, explicit_step,
    implicit_step, max_stable_dt, run_transport, upwind_value, write_series_csv,
)


def uniform_flux(mesh, u):
    """Edge fluxes of a constant velocity field (divergence free)."""
    return FaceFluxField(mesh, mesh.edge_length * (mesh.edge_normal @ np.asarray(u, float)))


def loop_step(mesh, flux, c_prev, cfg, implicit):
    """Element-by-element reference for one upwind step."""
    M = mesh.n_elements
    A = np.zeros((M, M))
    b = cfg.porosity * mesh.area / cfg.dt * c_prev
    for T in range(M):
        A[T, T] = cfg.porosity * mesh.area[T] / cfg.dt
        for i in range(3):
            e = mesh.elem_edges[T, i]
            F = flux.flux[e] * (1 if mesh.edge_elems[e, 0] == T else -1)
            other = mesh.edge_elems[e, 1] if mesh.edge_elems[e, 0] == T else mesh.edge_elems[e, 0]
            if implicit:
                if F >= 0:
                    A[T, T] += F
                elif other >= 0:
                    A[T, other] += F
                else:
                    b[T] -= F * cfg.c_inflow
            else:
                up = c_prev[T] if F >= 0 else (c_prev[other] if other >= 0 else cfg.c_inflow)
                b[T] -= F * up
    if implicit:
        return np.linalg.solve(A, b)
    return b / (cfg.porosity * mesh.area / cfg.dt)


def test_upwind_value():
    assert upwind_value(1.0, 0.3, 0.7) == 0.3
    assert upwind_value(-1.0, 0.3, 0.7) == 0.7
    assert upwind_value(0.0, 0.3, 0.7) == 0.3


@pytest.mark.parametrize("implicit", [True, False])
def test_two_element_hand_oracle(implicit, rng):
    mesh = build_structured_mesh(unit_square(), 0)
    flux = uniform_flux(mesh, [1.0, 0.3])
    cfg = TransportConfig(dt=0.05, c_inflow=1.0)
    c0 = rng.uniform(0, 1, mesh.n_elements)
    step = implicit_step if implicit else explicit_step
    assert np.allclose(step(mesh, flux, c0, cfg), loop_step(mesh, flux, c0, cfg, implicit), atol=1e-14)


@pytest.mark.parametrize("implicit", [True, False])
def test_loop_oracle_on_darcy_flux(implicit, rng):
    p = preset("example3")
    mesh = build_structured_mesh(p.spec(), 2)
    data = p.data()
    flux = recover_velocity(mesh, solve_epg(mesh, 1, data), data)
    dt = 0.5 * max_stable_dt(mesh, flux, 0.2)[0] if not implicit else 0.01
    cfg = TransportConfig(dt=dt)
    c0 = rng.uniform(0, 1, mesh.n_elements)
    step = implicit_step if implicit else explicit_step
    assert np.allclose(step(mesh, flux, c0, cfg), loop_step(mesh, flux, c0, cfg, implicit), atol=1e-12)


@pytest.mark.parametrize("scheme", ["implicit", "explicit"])
def test_zero_flux_keeps_state(scheme):
    mesh = build_structured_mesh(unit_square(), 2)
    res = run_transport(mesh, FaceFluxField(mesh, np.zeros(mesh.n_edges)),
                        TransportConfig(c_initial=0.4, steps=5, scheme=scheme))
    assert np.all(res.concentration == 0.4)


@pytest.mark.parametrize("scheme", ["implicit", "explicit"])
def test_constant_state_preserved(scheme):
    mesh = build_structured_mesh(unit_square(), 3)
    flux = uniform_flux(mesh, [0.4, -0.7])
    dt = 0.5 * max_stable_dt(mesh, flux, 0.2)[0]
    res = run_transport(mesh, flux, TransportConfig(c_initial=1.0, c_inflow=1.0, dt=dt, steps=10, scheme=scheme))
    assert np.abs(res.concentration - 1.0).max() < 1e-12


def test_cfl_violation_fields():
    mesh = build_structured_mesh(unit_square(), 3)
    flux = uniform_flux(mesh, [1.0, 0.5])
    dt_max, T = max_stable_dt(mesh, flux, 0.2)
    out = np.clip(flux.outward(), 0, None).sum(axis=1)
    ref = np.where(out > 0, 0.2 * mesh.area / np.where(out > 0, out, 1), np.inf)
    assert dt_max == pytest.approx(ref.min(), rel=1e-14)
    assert check_cfl(mesh, flux, 0.2, 0.9 * dt_max) == dt_max
    with pytest.raises(CFLViolation) as exc:
        run_transport(mesh, flux, TransportConfig(dt=2 * dt_max, scheme="explicit"))
    assert exc.value.dt_max == pytest.approx(dt_max)
    assert exc.value.element == T


def test_config_validation():
    with pytest.raises(ValueError):
        TransportConfig(porosity=0)
    with pytest.raises(ValueError):
        TransportConfig(dt=-1)
    with pytest.raises(ValueError):
        TransportConfig(scheme="crank")


@pytest.mark.parametrize("scheme", ["implicit", "explicit"])
def test_source_mass_balance(scheme):
    p = preset("example1")
    mesh = build_structured_mesh(p.spec(), 3)
    data = p.data()
    flux = recover_velocity(mesh, solve_epg(mesh, 1, data), data)
    dt = 0.05 if scheme == "implicit" else 0.9 * max_stable_dt(mesh, flux, 0.2)[0]
    res = run_transport(mesh, flux, TransportConfig(dt=dt, steps=20, scheme=scheme, source=data.f))
    assert max(r.mass_defect for r in res.records[1:]) < 1e-10


def test_explicit_and_implicit_converge_together():
    p = preset("example2")
    mesh = build_structured_mesh(p.spec(), 3)
    data = p.data()
    flux = recover_velocity(mesh, solve_epg(mesh, 1, data), data)
    dt0 = 0.9 * max_stable_dt(mesh, flux, 0.2)[0]
    # same final time 40 * dt0 on each level
    gaps = []
    for halve in range(4):
        dt = dt0 / 2**halve
        n = 40 * 2**halve
        ce = run_transport(mesh, flux, TransportConfig(dt=dt, steps=n, scheme="explicit")).concentration
        ci = run_transport(mesh, flux, TransportConfig(dt=dt, steps=n)).concentration
        gaps.append(np.abs(ce - ci).max())
    ratios = np.array(gaps[:-1]) / np.array(gaps[1:])
    assert np.all(ratios > 1.7) and np.all(ratios < 2.3)


def test_tampered_matrix_rejected():
    mesh = build_structured_mesh(unit_square(), 2)
    flux = uniform_flux(mesh, [1.0, 0.2])
    A, _ = assemble_implicit_matrix(mesh, flux, 0.2, 0.05)
    B = A.tolil()
    i, j = A.nonzero()
    k = np.flatnonzero(i != j)[0]
    B[i[k], j[k]] = -B[i[k], j[k]]
    with pytest.raises(MMatrixError):
        MMatrixSolver(B.tocsr())


def test_per_step_validation_failure_raises(monkeypatch):
    mesh = build_structured_mesh(unit_square(), 2)
    flux = uniform_flux(mesh, [1.0, 0.2])
    real = transport.linalg.validate_mmatrix
    calls = {"n": 0}

    def flaky(A):
        calls["n"] += 1
        out = real(A)
        if calls["n"] == 4:
            out["ok"] = False
        return out

    monkeypatch.setattr(transport.linalg, "validate_mmatrix", flaky)
    with pytest.raises(MMatrixError, match="step 3"):
        run_transport(mesh, flux, TransportConfig(steps=5))


def test_records_and_csv(tmp_path):
    mesh = build_structured_mesh(unit_square(), 2)
    flux = uniform_flux(mesh, [1.0, 0.0])
    res = run_transport(mesh, flux, TransportConfig(steps=4), keep_history=True)
    assert len(res.records) == 5 and len(res.history) == 5
    assert all(r.mmatrix_ok for r in res.records[1:])
    path = tmp_path / "s.csv"
    write_series_csv(res.records, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,time,max_c,min_c,total_mass"
    assert len(lines) == 6


@settings(max_examples=40, deadline=None)
@given(
    ux=st.floats(-2, 2), uy=st.floats(-2, 2), dt=st.floats(1e-3, 10.0),
    frac=st.floats(0.05, 0.98), c0=st.floats(0, 1), cin=st.floats(0, 1),
)
def test_bounds_random(ux, uy, dt, frac, c0, cin):
    mesh = build_structured_mesh(unit_square(), 2)
    flux = uniform_flux(mesh, [ux, uy])
    lo, hi = min(c0, cin), max(c0, cin)
    ci = run_transport(mesh, flux, TransportConfig(dt=dt, steps=5, c_initial=c0, c_inflow=cin))
    assert ci.max_series.max() <= hi + 1e-12 and ci.min_series.min() >= lo - 1e-12
    dt_max, _ = max_stable_dt(mesh, flux, 0.2)
    if np.isfinite(dt_max):
        ce = run_transport(mesh, flux, TransportConfig(dt=frac * dt_max, steps=5, c_initial=c0,
                                                       c_inflow=cin, scheme="explicit"))
        assert ce.max_series.max() <= hi + 1e-12 and ce.min_series.min() >= lo - 1e-12
