"""Convergence tables, observed rates and conservation residual reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import darcy
from .darcy import ProblemData
from .mesh import DomainSpec, Mesh, build_structured_mesh

RATE_COLUMNS = ("level", "h", "dofs", "energy_err", "vel_err", "trace_err",
                "rate_energy", "rate_vel", "rate_trace")


@dataclass
class ConvergenceRow:
    level: int
    h: float
    dofs: int
    energy_err: float
    vel_err: float
    trace_err: float
    rate_energy: float = float("nan")
    rate_vel: float = float("nan")
    rate_trace: float = float("nan")


def observed_rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float:
    return float(np.log(e_coarse / e_fine) / np.log(h_coarse / h_fine))


def convergence_study(spec: DomainSpec, data: ProblemData, k: int, method: str,
                      levels, rtol: float = 1e-12) -> list[ConvergenceRow]:
    """Relative errors on each level and rates between consecutive levels.

    Errors are the energy error over ``||K^1/2 grad p||`` and the velocity and
    face-trace errors over ``||u||``; ``h`` is the largest element diameter.
    """
    rows: list[ConvergenceRow] = []
    for level in levels:
        mesh = build_structured_mesh(spec, level)
        sol = darcy.solve(mesh, k, data, method, rtol)
        err = darcy.energy_and_velocity_errors(mesh, sol, data)
        row = ConvergenceRow(level, mesh.h(), sol.n_dofs, err.rel_energy, err.rel_velocity, err.rel_trace)
        if rows:
            prev = rows[-1]
            row.rate_energy = observed_rate(prev.energy_err, row.energy_err, prev.h, row.h)
            row.rate_vel = observed_rate(prev.vel_err, row.vel_err, prev.h, row.h)
            row.rate_trace = observed_rate(prev.trace_err, row.trace_err, prev.h, row.h)
        rows.append(row)
    return rows


def fit_rate(h, err) -> float:
    """Least-squares slope of ``log err`` against ``log h``."""
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def write_rate_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATE_COLUMNS)
        for r in rows:
            w.writerow([r.level, repr(r.h), r.dofs] + [f"{getattr(r, c):.12e}" for c in RATE_COLUMNS[3:]])


@dataclass
class ResidualReport:
    """Per-element conservation residual of one velocity field."""

    method: str
    k: int
    residual: np.ndarray
    max_abs: float
    argmax: int
    location: np.ndarray  # centroid of the worst element
    extra: dict = field(default_factory=dict)


def residual_report(mesh: Mesh, data: ProblemData, k: int, method: str,
                    rtol: float = 1e-12, solution=None) -> ResidualReport:
    sol = solution if solution is not None else darcy.solve(mesh, k, data, method, rtol)
    flux = darcy.recover_velocity(mesh, sol, data)
    R, mx = darcy.local_conservation_residual(mesh, flux, data.f)
    i = int(np.argmax(np.abs(R)))
    return ResidualReport(sol.method, k, R, mx, i, mesh.centroids()[i], {"solution": sol, "flux": flux})


def distance_to_region_corners(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest corner of a conductivity region."""
    regions = mesh.spec.regions if mesh.spec is not None else ()
    if not regions:
        return np.full(len(points), np.inf)
    corners = np.array([(x, y) for r in regions for x in (r.xmin, r.xmax) for y in (r.ymin, r.ymax)])
    d = np.linalg.norm(np.asarray(points)[:, None, :] - corners[None, :, :], axis=2)
    return d.min(axis=1)


def write_residual_csv(reports, mesh: Mesh, path) -> None:
    c = mesh.centroids()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["element", "x", "y"] + [f"R_{r.method}_P{r.k}" for r in reports])
        for T in range(mesh.n_elements):
            w.writerow([T, repr(c[T, 0]), repr(c[T, 1])] + [f"{r.residual[T]:.12e}" for r in reports])
