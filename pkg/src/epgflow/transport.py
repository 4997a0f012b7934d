"""Cell-centred upwind transport of a concentration driven by edge fluxes.

Unknowns are element averages. Each edge carries the integrated normal
flux from a :class:`~epgflow.darcy.FaceFluxField`; the upwind value on an
edge is the concentration of the element the flow leaves, or the inflow
concentration on inflow boundary edges.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import linalg
from .darcy import FaceFluxField, source_integrals
from .linalg import MMatrixError, MMatrixSolver, SolverError
from .mesh import Mesh

CFL_SAFETY = 0.99


class CFLViolation(ValueError):
    """Explicit step size exceeds the positivity limit."""

    def __init__(self, message, dt_max, element):
        super().__init__(message)
        self.dt_max = dt_max
        self.element = element


@dataclass
class TransportConfig:
    porosity: float = 0.2
    c_inflow: float = 1.0
    c_initial: float = 0.0
    dt: float = 0.05
    steps: int = 100
    scheme: str = "implicit"
    source: Callable | None = None  # f-hat; None means zero
    validate: bool = True
    rtol: float = 1e-13

    def __post_init__(self):
        if self.porosity <= 0:
            raise ValueError("porosity must be positive")
        if self.dt <= 0 or self.steps < 0:
            raise ValueError("dt must be positive and steps non-negative")
        if self.scheme not in ("implicit", "explicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


def upwind_value(flux: float, c_inside: float, c_outside: float) -> float:
    """Concentration carried by a flux measured out of the 'inside' element."""
    return c_inside if flux >= 0 else c_outside


def _outward(mesh: Mesh, flux) -> np.ndarray:
    return flux.outward() if isinstance(flux, FaceFluxField) else np.asarray(flux)[mesh.elem_edges] * mesh.elem_edge_sign


def max_stable_dt(mesh: Mesh, flux, porosity: float) -> tuple[float, int]:
    """Largest explicit step keeping every update a convex combination.

    ``dt < phi |T| / (sum of outflow fluxes of T)``, boundary outflow edges
    included. Returns ``(dt_max, limiting element)``.
    """
    out = np.clip(_outward(mesh, flux), 0, None).sum(axis=1)
    with np.errstate(divide="ignore"):
        limit = np.where(out > 0, porosity * mesh.area / out, np.inf)
    T = int(np.argmin(limit))
    return float(limit[T]), T


def check_cfl(mesh: Mesh, flux, porosity: float, dt: float, safety: float = CFL_SAFETY) -> float:
    dt_max, T = max_stable_dt(mesh, flux, porosity)
    if dt > safety * dt_max:
        raise CFLViolation(
            f"dt={dt:g} exceeds {safety:g} x stable limit {dt_max:.6g} (element {T})", dt_max, T
        )
    return dt_max


def _neighbour_table(mesh: Mesh) -> np.ndarray:
    """(M, 3) neighbour across each local edge, -1 on the boundary."""
    ee = mesh.edge_elems[mesh.elem_edges]  # (M, 3, 2)
    own = np.arange(mesh.n_elements)[:, None]
    return np.where(ee[..., 0] == own, ee[..., 1], ee[..., 0])


def _source_vector(mesh: Mesh, cfg: TransportConfig) -> np.ndarray:
    if cfg.source is None:
        return np.zeros(mesh.n_elements)
    return source_integrals(mesh, cfg.source)


def explicit_step(mesh: Mesh, flux, c_prev: np.ndarray, cfg: TransportConfig,
                  check: bool = True) -> np.ndarray:
    if check:
        check_cfl(mesh, flux, cfg.porosity, cfg.dt)
    F = _outward(mesh, flux)
    nb = _neighbour_table(mesh)
    upstream = np.where(nb >= 0, c_prev[np.maximum(nb, 0)], cfg.c_inflow)
    carried = np.where(F >= 0, c_prev[:, None], upstream)
    net = (F * carried).sum(axis=1)
    return c_prev + cfg.dt / (cfg.porosity * mesh.area) * (_source_vector(mesh, cfg) - net)


def assemble_implicit_matrix(mesh: Mesh, flux, porosity: float, dt: float):
    """Backward-Euler upwind matrix and the boundary-inflow weights.

    Row T: ``phi |T|/dt + sum_out F`` on the diagonal and the (negative)
    inflow flux from each upstream neighbour off the diagonal. Returns
    ``(A, inflow)`` with ``inflow[T]`` the total boundary inflow flux (<= 0).
    """
    F = _outward(mesh, flux)
    nb = _neighbour_table(mesh)
    M = mesh.n_elements
    diag = porosity * mesh.area / dt + np.clip(F, 0, None).sum(axis=1)
    up = (F < 0) & (nb >= 0)
    rows = np.concatenate([np.arange(M), np.nonzero(up)[0]])
    cols = np.concatenate([np.arange(M), nb[up]])
    vals = np.concatenate([diag, F[up]])
    A = linalg.as_csr(sp.coo_matrix((vals, (rows, cols)), shape=(M, M)))
    inflow = np.where((F < 0) & (nb < 0), F, 0.0).sum(axis=1)
    return A, inflow


class ImplicitStepper:
    """Holds the validated, ordered matrix for a fixed flux and step size."""

    def __init__(self, mesh: Mesh, flux, cfg: TransportConfig, method: str = "sweep"):
        self.mesh, self.cfg = mesh, cfg
        self.A, self.inflow = assemble_implicit_matrix(mesh, flux, cfg.porosity, cfg.dt)
        self.solver = MMatrixSolver(self.A, method=method, validate=cfg.validate)
        self.mass_coef = cfg.porosity * mesh.area / cfg.dt
        self.src = _source_vector(mesh, cfg)
        self.reports = []

    @property
    def diagnostics(self):
        return self.solver.diagnostics

    def rhs(self, c_prev):
        return self.mass_coef * c_prev - self.inflow * self.cfg.c_inflow + self.src

    def step(self, c_prev: np.ndarray) -> np.ndarray:
        c, report = self.solver.solve(self.rhs(c_prev), rtol=self.cfg.rtol, x0=c_prev)
        self.reports.append(report)
        if not report.converged:
            raise SolverError(f"transport solve did not converge: {report}", report)
        return c


def implicit_step(mesh: Mesh, flux, c_prev: np.ndarray, cfg: TransportConfig) -> np.ndarray:
    return ImplicitStepper(mesh, flux, cfg).step(c_prev)


def boundary_flux_balance(mesh: Mesh, flux, c: np.ndarray, c_inflow: float) -> tuple[float, float]:
    """Net advective mass leaving through the boundary for concentration c.

    Also returns the sum of the magnitudes of the individual edge terms.
    """
    F = _outward(mesh, flux)
    bd = _neighbour_table(mesh) < 0
    terms = (F * np.where(F >= 0, c[:, None], c_inflow))[bd]
    return float(terms.sum()), float(np.abs(terms).sum())


@dataclass
class StepRecord:
    step: int
    time: float
    max_c: float
    min_c: float
    total_mass: float
    mass_defect: float = 0.0  # relative global balance error of this step
    mmatrix_ok: bool | None = None


@dataclass
class TransportResult:
    concentration: np.ndarray
    records: list = field(default_factory=list)
    history: list | None = None

    @property
    def max_series(self) -> np.ndarray:
        return np.array([r.max_c for r in self.records])

    @property
    def min_series(self) -> np.ndarray:
        return np.array([r.min_c for r in self.records])

    def write_csv(self, path) -> None:
        write_series_csv(self.records, path)


def run_transport(mesh: Mesh, flux, cfg: TransportConfig, keep_history: bool = False) -> TransportResult:
    """March ``cfg.steps`` steps from the uniform initial state.

    Every step records max/min concentration, total mass ``sum phi |T| c``
    and the relative global mass balance defect
    ``|dM/dt + boundary flux - int f-hat|`` divided by the sum of the
    magnitudes of those terms.
    For the implicit scheme the system matrix is re-validated as an
    M-matrix before every step when ``cfg.validate`` is set.
    """
    c = np.full(mesh.n_elements, float(cfg.c_initial))
    mass = cfg.porosity * mesh.area
    src_total = float(_source_vector(mesh, cfg).sum())
    records = [StepRecord(0, 0.0, float(c.max()), float(c.min()), float(mass @ c))]
    history = [c.copy()] if keep_history else None
    stepper = None
    if cfg.scheme == "implicit":
        stepper = ImplicitStepper(mesh, flux, cfg)
    else:
        check_cfl(mesh, flux, cfg.porosity, cfg.dt)
    for n in range(1, cfg.steps + 1):
        c_prev = c
        ok = None
        if stepper is not None:
            if cfg.validate:
                ok = linalg.validate_mmatrix(stepper.A)["ok"]
                if not ok:
                    raise MMatrixError(f"M-matrix validation failed at step {n}")
            c = stepper.step(c_prev)
            c_flux = c
        else:
            c = explicit_step(mesh, flux, c_prev, cfg, check=False)
            c_flux = c_prev
        rate = float(mass @ (c - c_prev)) / cfg.dt
        bflux, babs = boundary_flux_balance(mesh, flux, c_flux, cfg.c_inflow)
        scale = max(abs(rate) + babs + abs(src_total), 1e-300)
        defect = abs(rate + bflux - src_total) / scale
        records.append(StepRecord(n, n * cfg.dt, float(c.max()), float(c.min()), float(mass @ c), defect, ok))
        if keep_history:
            history.append(c.copy())
    return TransportResult(c, records, history)


SERIES_COLUMNS = ("step", "time", "max_c", "min_c", "total_mass")


def write_series_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for r in records:
            w.writerow([r.step, repr(round(r.time, 12)), repr(r.max_c), repr(r.min_c), repr(r.total_mass)])


__all__ = [
    "CFLViolation", "MMatrixError", "TransportConfig", "TransportResult", "ImplicitStepper",
    "assemble_implicit_matrix", "check_cfl", "explicit_step", "implicit_step", "max_stable_dt",
    "run_transport", "upwind_value", "write_series_csv",
]
