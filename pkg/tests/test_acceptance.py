"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` (lines appear in the terminal
summary) or ``python tests/test_acceptance.py`` (lines go to stdout).
"""

from __future__ import annotations

import time
from functools import lru_cache

import numpy as np
import pytest

from epgflow import darcy, metrics
from epgflow.basis import BubbleBasis, bubble_eval, edge_points, psi_exponents, quadrature
from epgflow.linalg import validate_mmatrix
from epgflow.mesh import build_structured_mesh, from_arrays, unit_square, DIRICHLET
from epgflow.problems import PRESETS
from epgflow.transport import (
    TransportConfig, assemble_implicit_matrix, max_stable_dt, run_transport,
)

RESULTS: dict[int, tuple[bool, str]] = {}
EXAMPLES = ("example1", "example2", "example3")
DEGREES = (1, 2, 3)
FINE_COUNTS = {"example1": 32768, "example2": 40960, "example3": 24576}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS[n] = (ok, line)
    print(line)


@lru_cache(maxsize=None)
def _mesh(name: str, refined: bool):
    pr = PRESETS[name]
    return build_structured_mesh(pr.spec(), pr.level + (3 if refined else 0))


@lru_cache(maxsize=None)
def _solutions(name: str, k: int, refined: bool):
    pr = PRESETS[name]
    mesh, data = _mesh(name, refined), pr.data()
    cg = darcy.solve_cg(mesh, k, data)
    epg = darcy.solve_epg(mesh, k, data, p_c=cg)
    return {m: darcy.recover_velocity(mesh, s, data) for m, s in (("cg", cg), ("epg", epg))}


@lru_cache(maxsize=None)
def _transport(name: str, k: int, method: str, refined: bool):
    pr = PRESETS[name]
    cfg = TransportConfig(pr.porosity, pr.c_inflow, pr.c_initial, pr.dt, pr.steps, "implicit")
    return run_transport(_mesh(name, refined), _solutions(name, k, refined)[method], cfg)


# --- 1 ------------------------------------------------------------------------

def test_criterion_1_convergence_rates():
    pr = PRESETS["example1"]
    t0 = time.perf_counter()
    ok, parts = True, []
    for k in DEGREES:
        for method in ("cg", "epg"):
            rows = metrics.convergence_study(pr.spec(), pr.data(), k, method, range(3, 7))
            assert [r.level for r in rows] == [3, 4, 5, 6]  # h = 1/8 ... 1/64
            r = rows[-1]
            checks = {
                "energy": abs(r.rate_energy - k) <= 0.2,
                "vel": abs(r.rate_vel - k) <= 0.2,
                "trace": abs(r.rate_trace - (k - 0.5)) <= 0.2,
            }
            bad = [n for n, c in checks.items() if not c]
            ok &= not bad
            parts.append(f"{method}P{k} {r.rate_energy:.2f}/{r.rate_vel:.2f}/{r.rate_trace:.2f}"
                         + (f" [off: {','.join(bad)}]" if bad else ""))
    elapsed = time.perf_counter() - t0
    fast = elapsed < 180
    record(1, ok and fast, f"rates energy/vel/trace on h=1/32->1/64: {'; '.join(parts)}; "
                           f"runtime {elapsed:.1f}s (<180s: {fast})")
    assert fast, f"convergence study took {elapsed:.1f}s"
    assert ok, RESULTS[1][1]


# --- 2 ------------------------------------------------------------------------

def test_criterion_2_conservation_gap():
    ok, parts = True, []
    for name in EXAMPLES:
        mesh = _mesh(name, True)
        assert mesh.n_elements == FINE_COUNTS[name]
        f = PRESETS[name].data().f
        for k in DEGREES:
            fl = _solutions(name, k, True)
            r_epg = darcy.local_conservation_residual(mesh, fl["epg"], f)[1]
            r_cg = darcy.local_conservation_residual(mesh, fl["cg"], f)[1]
            small = r_epg <= 1e-10
            gap = r_cg >= 1e3 * r_epg
            ok &= small and gap
            parts.append(f"{name}/{mesh.n_elements} P{k}: EPG {r_epg:.1e} ({'ok' if small else 'BAD'}), "
                         f"CG {r_cg:.1e} ({'gap ok' if gap else 'NO GAP'})")
    record(2, ok, "; ".join(parts))
    assert ok, RESULTS[2][1]


# --- 3 and 4 ------------------------------------------------------------------

def test_criterion_3_epg_bounds():
    ok, parts = True, []
    for name in EXAMPLES:
        for refined in (False, True):
            for k in DEGREES:
                res = _transport(name, k, "epg", refined)
                mx, mn = res.max_series, res.min_series
                assert len(mx) == PRESETS[name].steps + 1
                good = bool(np.all(mx <= 1 + 1e-10) and np.all(mn >= -1e-12))
                ok &= good
                parts.append(f"{name}/{_mesh(name, refined).n_elements} P{k} "
                             f"max-1 {mx.max() - 1:+.1e} min {mn.min():.1e}{'' if good else ' BAD'}")
    record(3, ok, "; ".join(parts))
    assert ok, RESULTS[3][1]


def test_criterion_4_cg_overshoot():
    ok, parts = True, []
    for name in EXAMPLES:
        runs = []
        for refined in (False, True):
            for k in DEGREES:
                mx = _transport(name, k, "cg", refined).max_series.max()
                runs.append((f"{_mesh(name, refined).n_elements}/P{k}", mx))
        over = [tag for tag, mx in runs if mx > 1]
        ok &= bool(over)
        parts.append(f"{name}: overshoot in {len(over)}/{len(runs)} runs "
                     f"({', '.join(f'{t} {m:.3f}' for t, m in runs)})")
    record(4, ok, "; ".join(parts))
    assert ok, RESULTS[4][1]


# --- 5 ------------------------------------------------------------------------

def test_criterion_5_decoupled_equals_monolithic():
    mesh = build_structured_mesh(unit_square(), 1)
    assert mesh.n_elements == 8
    data = PRESETS["example1"].data()
    ok, parts = True, []
    for k in DEGREES:
        dec = darcy.solve_epg(mesh, k, data)
        mono = darcy.solve_monolithic(mesh, k, data)
        diff, norm = darcy.energy_norm_difference(dec, mono)
        rel = diff / norm
        ok &= rel <= 1e-8
        parts.append(f"P{k} rel energy diff {rel:.1e}")
    record(5, ok, "; ".join(parts))
    assert ok, RESULTS[5][1]


# --- 6 ------------------------------------------------------------------------

def _random_elements(n: int, rng) -> tuple:
    verts, tris = [], []
    while len(tris) < n:
        p = rng.uniform(0, 1, size=(3, 2))
        a = 0.5 * ((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0]))
        lengths = np.linalg.norm(p - np.roll(p, 1, axis=0), axis=1)
        if abs(a) < 0.02 * lengths.max() ** 2:
            continue  # skip slivers
        if a < 0:
            p = p[[0, 2, 1]]
        p = p * 10.0 ** rng.uniform(-3, 1) + rng.uniform(-5, 5, size=2)
        base = len(verts)
        verts.extend(p)
        tris.append((base, base + 1, base + 2))
    bnd = [(t[i], t[(i + 1) % 3], DIRICHLET) for t in tris for i in range(3)]
    mesh = from_arrays(np.array(verts), np.array(tris), bnd)
    K = 10.0 ** rng.uniform(-3, 2, size=n)
    return mesh, K


def test_criterion_6_bubble_suite():
    rng = np.random.default_rng(20240611)
    mesh, K = _random_elements(1000, rng)
    er = quadrature("edge", 8)
    tri = quadrature("triangle", 10)
    n_out = mesh.outward_normals()
    L = mesh.edge_length[mesh.elem_edges]
    worst_flux, worst_orth = 0.0, 0.0
    for k in DEGREES:
        bub = BubbleBasis.build(mesh, k, K)
        for i in range(3):
            _, g = bubble_eval(bub, edge_points(i, er.points), mesh.grad_lambda)
            flux = K * L[:, i] * np.einsum("q,eqx,ex->e", er.weights, g, n_out[:, i])
            worst_flux = max(worst_flux, float(np.abs(flux - 1).max()))
        vals, _ = bubble_eval(bub, tri.points, mesh.grad_lambda)
        for p in psi_exponents(k):
            psi = np.prod(tri.points ** np.array(p), axis=1)
            w = 2 * mesh.area[:, None] * tri.weights[None, :]
            integ = K * np.sum(w * vals * psi, axis=1)
            scale = K * np.sum(w * np.abs(vals * psi), axis=1)
            worst_orth = max(worst_orth, float(np.max(np.abs(integ) / scale)))
    ok_flux = worst_flux <= 1e-10
    ok_orth = worst_orth <= 1e-10
    record(6, ok_flux and ok_orth,
           f"1000 random elements, k=1..3: max |flux-1| {worst_flux:.1e} ({'ok' if ok_flux else 'BAD'}), "
           f"max relative orthogonality {worst_orth:.1e} ({'ok' if ok_orth else 'BAD'})")
    assert ok_flux and ok_orth, RESULTS[6][1]


# --- 7 ------------------------------------------------------------------------

def test_criterion_7_mmatrix_and_explicit_cfl():
    ok_m, ok_e, parts = True, True, []
    for name in EXAMPLES:
        pr = PRESETS[name]
        mesh = _mesh(name, False)
        for k in DEGREES:
            flux = _solutions(name, k, False)["epg"]
            res = _transport(name, k, "epg", False)
            steps_ok = all(r.mmatrix_ok for r in res.records[1:]) and len(res.records) == pr.steps + 1
            A, _ = assemble_implicit_matrix(mesh, flux, pr.porosity, pr.dt)
            steps_ok &= validate_mmatrix(A)["ok"]
            ok_m &= steps_ok
            dt_max, _ = max_stable_dt(mesh, flux, pr.porosity)
            for frac in (0.9, 0.5):
                cfg = TransportConfig(pr.porosity, pr.c_inflow, pr.c_initial, frac * dt_max, 200, "explicit")
                ex = run_transport(mesh, flux, cfg)
                good = bool(np.all(ex.max_series <= 1 + 1e-10) and np.all(ex.min_series >= -1e-12))
                ok_e &= good
                if frac == 0.9:
                    parts.append(f"{name} P{k}: M-matrix {'ok' if steps_ok else 'BAD'} x{pr.steps}, "
                                 f"explicit dt={frac:.1f}dt_max max {ex.max_series.max():.4f} "
                                 f"min {ex.min_series.min():.1e}{'' if good else ' BAD'}")
    record(7, ok_m and ok_e, "; ".join(parts))
    assert ok_m and ok_e, RESULTS[7][1]


# --- 8 ------------------------------------------------------------------------

def test_criterion_8_implicit_mass_balance():
    ok, parts = True, []
    for name in EXAMPLES:
        worst = 0.0
        for k in DEGREES:
            for method in ("cg", "epg"):
                res = _transport(name, k, method, False)
                worst = max(worst, max(r.mass_defect for r in res.records[1:]))
        ok &= worst <= 1e-10
        parts.append(f"{name} CG+EPG P1-3: max relative defect {worst:.1e}")
    # nonzero source, nonzero initial state
    pr = PRESETS["example1"]
    mesh = _mesh("example1", False)
    cfg = TransportConfig(0.2, 1.0, 0.3, 0.05, 100, "implicit",
                          source=lambda x, y: np.sin(3 * x) * np.cos(2 * y))
    res = run_transport(mesh, _solutions("example1", 2, False)["epg"], cfg)
    worst = max(r.mass_defect for r in res.records[1:])
    ok &= worst <= 1e-10
    parts.append(f"example1 with source and c0=0.3: {worst:.1e}")
    record(8, ok, "; ".join(parts))
    assert ok, RESULTS[8][1]


if __name__ == "__main__":
    import sys

    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_criterion_")]
    failed = 0
    for t in tests:
        try:
            t()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
