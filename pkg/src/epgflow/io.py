"""Plain-text mesh files, legacy VTK output and run manifests."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .mesh import TAG_CODES, TAG_NAMES, DomainSpec, Mesh, MeshError, from_arrays


def write_mesh(mesh: Mesh, path) -> None:
    """Write ``nodes``/``elements``/``boundary`` sections, 0-based, CCW."""
    lines = [f"nodes {len(mesh.vertices)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"elements {mesh.n_elements}")
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    bnd = mesh.boundary_edges
    lines.append(f"boundary {len(bnd)}")
    for e in bnd:
        a, b = mesh.edges[e]
        lines.append(f"{a} {b} {TAG_NAMES[int(mesh.edge_tag[e])]}")
    Path(path).write_text("\n".join(lines) + "\n")


def _section(tokens, pos, name):
    if pos + 1 >= len(tokens) or tokens[pos] != name:
        raise MeshError(f"expected '{name} <count>' header")
    try:
        n = int(tokens[pos + 1])
    except ValueError:
        raise MeshError(f"bad count for section '{name}'") from None
    if n < 0:
        raise MeshError(f"negative count for section '{name}'")
    return n, pos + 2


def read_mesh(path, spec: DomainSpec | None = None) -> Mesh:
    """Parse the text mesh format; ``spec`` supplies conductivity and boundary data.

    Raises :class:`MeshError` on malformed input, clockwise elements,
    out-of-range indices or unknown boundary tags.
    """
    tokens = Path(path).read_text().split()
    n, pos = _section(tokens, 0, "nodes")
    try:
        verts = np.array(tokens[pos:pos + 2 * n], dtype=float).reshape(n, 2)
    except ValueError:
        raise MeshError("malformed node coordinates") from None
    pos += 2 * n
    m, pos = _section(tokens, pos, "elements")
    try:
        tris = np.array(tokens[pos:pos + 3 * m], dtype=np.int64).reshape(m, 3)
    except ValueError:
        raise MeshError("malformed element connectivity") from None
    pos += 3 * m
    if tris.size and (tris.min() < 0 or tris.max() >= n):
        raise MeshError("element references a node index out of range")
    b, pos = _section(tokens, pos, "boundary")
    rows = tokens[pos:pos + 3 * b]
    if len(rows) != 3 * b or pos + 3 * b != len(tokens):
        raise MeshError("boundary section length does not match its count")
    boundary = []
    for i in range(b):
        a0, a1, tag = rows[3 * i:3 * i + 3]
        if tag not in TAG_CODES:
            raise MeshError(f"unknown boundary tag {tag!r} (expected D or N)")
        boundary.append((int(a0), int(a1), TAG_CODES[tag]))
    return from_arrays(verts, tris, boundary, spec)


def write_vtk(path, mesh: Mesh, point_data: dict | None = None, cell_data: dict | None = None,
              cell_vectors: dict | None = None, title: str = "epgflow") -> None:
    """Legacy ASCII unstructured grid of triangles (VTK cell type 5)."""
    V, T = mesh.vertices, mesh.triangles
    out = ["# vtk DataFile Version 2.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {len(V)} double"]
    out += [f"{x:.17g} {y:.17g} 0" for x, y in V]
    out.append(f"CELLS {len(T)} {4 * len(T)}")
    out += [f"3 {a} {b} {c}" for a, b, c in T]
    out.append(f"CELL_TYPES {len(T)}")
    out += ["5"] * len(T)
    if point_data:
        out.append(f"POINT_DATA {len(V)}")
        for name, arr in point_data.items():
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [f"{v:.17g}" for v in np.asarray(arr, float)]
    if cell_data or cell_vectors:
        out.append(f"CELL_DATA {len(T)}")
        for name, arr in (cell_data or {}).items():
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [f"{v:.17g}" for v in np.asarray(arr, float)]
        for name, arr in (cell_vectors or {}).items():
            out.append(f"VECTORS {name} double")
            out += [f"{u:.17g} {v:.17g} 0" for u, v in np.asarray(arr, float)]
    Path(path).write_text("\n".join(out) + "\n")


def read_vtk_sections(path) -> dict:
    """Minimal reader used to check our own files: header counts and array names."""
    lines = Path(path).read_text().splitlines()
    info = {"arrays": []}
    for ln in lines:
        parts = ln.split()
        if not parts:
            continue
        if parts[0] in ("POINTS", "CELLS", "CELL_TYPES", "POINT_DATA", "CELL_DATA"):
            info[parts[0]] = int(parts[1])
        elif parts[0] in ("SCALARS", "VECTORS"):
            info["arrays"].append((parts[0], parts[1]))
    return info


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(outdir, config: dict, files, extra: dict | None = None) -> Path:
    """JSON manifest with the resolved configuration and a sha256 per output file."""
    outdir = Path(outdir)
    entries = {Path(f).name: sha256_file(f) for f in sorted(files, key=lambda p: Path(p).name)}
    doc = {"config": config, "files": entries}
    if extra:
        doc.update(extra)
    path = outdir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path
