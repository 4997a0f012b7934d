"""Command-line driver: ``epgflow {darcy,transport,convergence,residuals}``.

Settings come from, in increasing priority: built-in defaults, a preset
(``--preset example1``), a ``key=value`` config file (``--config``) and
explicit flags. Exit codes: 0 ok, 2 bad configuration, 3 solver failure,
4 validation or invariant failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import darcy, io, linalg, metrics
from .linalg import MMatrixError, SingularSystemError, SolverError
from .mesh import DOMAINS, MeshError, build_structured_mesh
from .problems import PRESETS
from .transport import CFLViolation, TransportConfig, run_transport, write_series_csv

log = logging.getLogger("epgflow")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VALIDATION = 0, 2, 3, 4

DOMAIN_PRESET = {"unit_square": "example1", "ten_shape": "example2", "l_shape": "example3"}
CONSERVATION_TOL = 1e-10


class ConfigError(ValueError):
    pass


class ValidationFailure(RuntimeError):
    pass


@dataclass
class RunConfig:
    command: str = "darcy"
    domain: str = "unit_square"
    k: str | None = None  # default: all degrees for convergence, 1 otherwise
    method: str | None = None  # default: both for convergence, epg otherwise
    level: int | None = None
    levels: str = "3-6"
    dt: float | None = None
    steps: int = 100
    scheme: str = "implicit"
    porosity: float = 0.2
    c_inflow: float = 1.0
    c_initial: float = 0.0
    out: str = "runs/out"
    rtol: float = 1e-12
    mesh: str | None = None
    vtk_stride: int = 0
    dump_matrix: bool = False

    def degrees(self) -> list[int]:
        if self.k is None:
            return [1, 2, 3] if self.command == "convergence" else [1]
        try:
            ks = [int(v) for v in str(self.k).split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"k must be 1, 2, 3 or a comma list, got {self.k!r}") from None
        if not ks or any(v not in (1, 2, 3) for v in ks):
            raise ConfigError(f"k must be in {{1, 2, 3}}, got {self.k!r}")
        return ks

    def methods(self) -> list[str]:
        if self.method is None:
            return ["cg", "epg"] if self.command == "convergence" else ["epg"]
        ms = [m.strip().lower() for m in str(self.method).split(",") if m.strip()]
        if not ms or any(m not in ("cg", "epg") for m in ms):
            raise ConfigError(f"method must be cg or epg, got {self.method!r}")
        return ms

    def level_list(self) -> list[int]:
        s = str(self.levels).strip()
        try:
            if "-" in s:
                a, b = s.split("-")
                out = list(range(int(a), int(b) + 1))
            elif "," in s:
                out = [int(v) for v in s.split(",")]
            else:
                out = list(range(3, int(s) + 1))
        except ValueError:
            raise ConfigError(f"cannot parse levels {self.levels!r}") from None
        if len(out) < 2:
            raise ConfigError("a convergence study needs at least two levels")
        return out

    def validate(self) -> None:
        if self.command not in ("darcy", "transport", "convergence", "residuals"):
            raise ConfigError(f"unknown command {self.command!r}")
        if self.domain not in DOMAINS:
            raise ConfigError(f"unknown domain {self.domain!r}; choose from {sorted(DOMAINS)}")
        self.degrees()
        self.methods()
        if self.level is not None and self.level < 0:
            raise ConfigError("level must be non-negative")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if self.scheme not in ("implicit", "explicit"):
            raise ConfigError(f"scheme must be implicit or explicit, got {self.scheme!r}")
        if self.porosity <= 0:
            raise ConfigError("porosity must be positive")
        if not (0 <= self.c_inflow <= 1 and 0 <= self.c_initial <= 1):
            raise ConfigError("concentrations must lie in [0, 1]")
        if not (1e-14 <= self.rtol < 1):
            raise ConfigError("rtol must lie in [1e-14, 1)")
        if self.mesh is not None and not Path(self.mesh).is_file():
            raise ConfigError(f"mesh file {self.mesh!r} not found")
        if self.command == "convergence":
            if self.domain != "unit_square":
                raise ConfigError("convergence needs an exact solution; only unit_square has one")
            self.level_list()


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    t = str(_FIELD_TYPES[key])
    if value.lower() in ("none", "") and "None" in t:
        return None
    try:
        if t.startswith("int"):
            return int(value)
        if t.startswith("float"):
            return float(value)
        if t.startswith("bool"):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {key}") from None
    return value


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "k_degree":
            key = "k"
        if key != "preset" and key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        out[key] = value if key == "preset" else _coerce(key, value)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epgflow", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["darcy", "transport", "convergence", "residuals"])
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--domain", choices=sorted(DOMAINS))
    p.add_argument("--k", help="degree 1, 2, 3 or a comma list")
    p.add_argument("--method", help="cg or epg (comma list allowed for convergence/residuals)")
    p.add_argument("--level", type=int)
    p.add_argument("--levels", help="finest level N (levels 3..N), a range a-b or a list")
    p.add_argument("--dt", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--scheme", choices=["implicit", "explicit"])
    p.add_argument("--porosity", type=float)
    p.add_argument("--c-inflow", type=float, dest="c_inflow")
    p.add_argument("--c-initial", type=float, dest="c_initial")
    p.add_argument("--out", "-o", help="output directory")
    p.add_argument("--rtol", type=float)
    p.add_argument("--mesh", help="read the mesh from a text mesh file")
    p.add_argument("--vtk-stride", type=int, dest="vtk_stride")
    p.add_argument("--dump-matrix", action="store_true", default=None, dest="dump_matrix")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    file_vals = parse_config_file(args.config) if args.config else {}
    preset_name = args.preset or file_vals.pop("preset", None)
    file_vals.pop("preset", None)
    cfg = RunConfig(command=args.command)
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigError(f"unknown preset {preset_name!r}")
        pr = PRESETS[preset_name]
        cfg.domain, cfg.dt, cfg.steps = pr.domain, pr.dt, pr.steps
        cfg.porosity, cfg.c_inflow, cfg.c_initial = pr.porosity, pr.c_inflow, pr.c_initial
        cfg.level = pr.level
    for key, value in file_vals.items():
        setattr(cfg, key, value)
    for key in _FIELD_TYPES:
        if key == "command":
            continue
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def _problem(cfg: RunConfig):
    pr = PRESETS[DOMAIN_PRESET[cfg.domain]]
    spec = DOMAINS[cfg.domain]()
    level = cfg.level if cfg.level is not None else pr.level
    if cfg.mesh:
        mesh = io.read_mesh(cfg.mesh, spec)
    else:
        mesh = build_structured_mesh(spec, level)
    return pr, spec, mesh, pr.data()


def _check_conservation(R_max: float, data, mesh) -> None:
    scale = max(1.0, float(np.abs(darcy.source_integrals(mesh, data.f)).sum()))
    if R_max > CONSERVATION_TOL * scale:
        raise ValidationFailure(f"EPG local conservation residual {R_max:.3e} exceeds {CONSERVATION_TOL * scale:.1e}")


def _vertex_pressure(sol) -> np.ndarray:
    return sol.coeffs[: len(sol.mesh.vertices)]


def cmd_darcy(cfg: RunConfig, out: Path) -> list[Path]:
    _, _, mesh, data = _problem(cfg)
    files = []
    lines = [f"domain {cfg.domain}", f"elements {mesh.n_elements}"]
    for k in cfg.degrees():
        for method in cfg.methods():
            sol = darcy.solve(mesh, k, data, method, cfg.rtol)
            flux = darcy.recover_velocity(mesh, sol, data)
            R, R_max = darcy.local_conservation_residual(mesh, flux, data.f)
            vel = sol.velocity(np.array([[1 / 3, 1 / 3, 1 / 3]]))[:, 0, :]
            tag = f"{method}_P{k}"
            path = out / f"darcy_{tag}.vtk"
            io.write_vtk(
                path, mesh, point_data={"pressure": _vertex_pressure(sol)},
                cell_data={"alpha": sol.alpha, "R_loc": R, "K": sol.K},
                cell_vectors={"velocity": vel}, title=f"epgflow darcy {tag}",
            )
            files.append(path)
            if cfg.dump_matrix:
                system = darcy.assemble_cg(mesh, k, data)
                mpath = out / f"matrix_cg_P{k}.coo"
                linalg.write_coo(system.matrix, mpath)
                files.append(mpath)
                if method == "epg":
                    bpath = out / f"matrix_bubble_P{k}.coo"
                    linalg.write_coo(darcy.bubble_matrix(mesh), bpath)
                    files.append(bpath)
            lines.append(f"{tag} dofs {sol.n_dofs} max|R_loc| {R_max:.6e}")
            for rep in sol.reports:
                lines.append(f"  {rep}")
            if method == "epg":
                _check_conservation(R_max, data, mesh)
    files.append(_write_summary(out, lines))
    return files


def cmd_transport(cfg: RunConfig, out: Path) -> list[Path]:
    pr, _, mesh, data = _problem(cfg)
    files = []
    lines = [f"domain {cfg.domain}", f"elements {mesh.n_elements}"]
    dt = cfg.dt if cfg.dt is not None else pr.dt
    for k in cfg.degrees():
        for method in cfg.methods():
            sol = darcy.solve(mesh, k, data, method, cfg.rtol)
            flux = darcy.recover_velocity(mesh, sol, data)
            tcfg = TransportConfig(cfg.porosity, cfg.c_inflow, cfg.c_initial, dt, cfg.steps, cfg.scheme)
            res = run_transport(mesh, flux, tcfg, keep_history=cfg.vtk_stride > 0)
            tag = f"{method}_P{k}"
            path = out / f"series_{tag}.csv"
            write_series_csv(res.records, path)
            files.append(path)
            if cfg.vtk_stride > 0:
                for n in range(0, cfg.steps + 1, cfg.vtk_stride):
                    vpath = out / f"conc_{tag}_{n:04d}.vtk"
                    io.write_vtk(vpath, mesh, cell_data={"concentration": res.history[n]},
                                 title=f"epgflow concentration {tag} step {n}")
                    files.append(vpath)
            mx, mn = float(res.max_series.max()), float(res.min_series.min())
            worst = max(r.mass_defect for r in res.records)
            lines.append(f"{tag} max_c {mx:.12g} min_c {mn:.12g} mass_defect {worst:.3e}")
            if method == "epg" and cfg.scheme == "implicit" and (mx > 1 + 1e-10 or mn < -1e-12):
                raise ValidationFailure(f"{tag}: concentration left [0, 1] ({mn:.3e}, {mx:.3e})")
    files.append(_write_summary(out, lines))
    return files


def cmd_convergence(cfg: RunConfig, out: Path) -> list[Path]:
    pr = PRESETS["example1"]
    files, lines = [], []
    for k in cfg.degrees():
        for method in cfg.methods():
            rows = metrics.convergence_study(pr.spec(), pr.data(), k, method, cfg.level_list(), cfg.rtol)
            path = out / f"rates_{method}_P{k}.csv"
            metrics.write_rate_csv(rows, path)
            files.append(path)
            r = rows[-1]
            lines.append(f"{method}_P{k} rate_energy {r.rate_energy:.4f} rate_vel {r.rate_vel:.4f} "
                         f"rate_trace {r.rate_trace:.4f}")
    files.append(_write_summary(out, lines))
    return files


def cmd_residuals(cfg: RunConfig, out: Path) -> list[Path]:
    _, _, mesh, data = _problem(cfg)
    reports = []
    lines = [f"domain {cfg.domain}", f"elements {mesh.n_elements}"]
    for k in cfg.degrees():
        p_c = darcy.solve_cg(mesh, k, data, cfg.rtol)
        for method in ("cg", "epg"):
            sol = p_c if method == "cg" else darcy.solve_epg(mesh, k, data, cfg.rtol, p_c=p_c)
            rep = metrics.residual_report(mesh, data, k, method, solution=sol)
            reports.append(rep)
            d = metrics.distance_to_region_corners(mesh, rep.location[None, :])[0]
            lines.append(f"{rep.method}_P{k} max|R_loc| {rep.max_abs:.6e} at ({rep.location[0]:.6f}, "
                         f"{rep.location[1]:.6f}) corner_distance {d:.6f}")
    csv_path = out / "residuals.csv"
    metrics.write_residual_csv(reports, mesh, csv_path)
    vtk_path = out / "residuals.vtk"
    io.write_vtk(vtk_path, mesh, cell_data={f"R_{r.method}_P{r.k}": r.residual for r in reports},
                 title="epgflow residuals")
    for r in reports:
        if r.method == "EPG":
            _check_conservation(r.max_abs, data, mesh)
    return [csv_path, vtk_path, _write_summary(out, lines)]


def _write_summary(out: Path, lines) -> Path:
    path = out / "summary.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


COMMANDS = {"darcy": cmd_darcy, "transport": cmd_transport,
            "convergence": cmd_convergence, "residuals": cmd_residuals}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[cfg.command](cfg, out)
        io.write_manifest(out, asdict(cfg), files, {"backend": linalg.BACKEND})
    except (ConfigError, MeshError, KeyError) as exc:
        print(f"epgflow: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, SingularSystemError) as exc:
        print(f"epgflow: solver failure: {exc}", file=sys.stderr)
        report = getattr(exc, "report", None)
        if report is not None:
            print(f"  {report}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValidationFailure, MMatrixError, CFLViolation) as exc:
        print(f"epgflow: validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
