"""File output: legacy-VTK unstructured grids and 1D cut CSVs.

The dual cells are exported as polygons carrying the cell unknowns (density,
velocity, pressure copy, distortion, thermal impulse, Mach estimate); the
primal-vertex pressure rides along as point data on a companion triangulation
piece.  Cuts sample the nearest dual node along a straight line and write a
fixed column order so downstream tooling can rely on it:

    x,y,rho,u1,u2,p,A11,A12,A13,A21,A22,A23,A31,A32,A33,J1,J2,J3
"""

from __future__ import annotations

import numpy as np

CUT_COLUMNS = ("x", "y", "rho", "u1", "u2", "p",
               "A11", "A12", "A13", "A21", "A22", "A23",
               "A31", "A32", "A33", "J1", "J2", "J3")


def _dual_polygons(primal, dual):
    """Vertex loops of the dual cells in the pre-merge chart.

    Interior diamonds are (vertex, barycenter, vertex, barycenter) loops,
    boundary cells triangles; merged periodic cells are drawn as the
    representative's half (the polygon is for visualisation only).
    """
    polys = []
    verts = primal.vertices
    bary = primal.barycenters
    for e in range(primal.n_edges):
        v0, v1 = primal.edges[e]
        tl, tr = primal.edge_tris[e]
        if tr >= 0:
            polys.append([verts[v0], bary[tr], verts[v1], bary[tl]])
        else:
            polys.append([verts[v0], verts[v1], bary[tl]])
    return polys


def write_vtk(path, primal, dual, fields, params=None):
    """Legacy ASCII VTK unstructured grid of the dual cells.

    Raises OSError with the path on I/O failure.
    """
    polys = _dual_polygons(primal, dual)
    # map pre-merge polygons onto (possibly merged) cell data
    if dual.n_cells == primal.n_edges:
        cell_of_poly = np.arange(primal.n_edges)
    else:
        # rebuild the merge map from the boundary pairing: a cell id equals
        # the union-find root, which the merged mesh stores implicitly via
        # tri_cells; recover per-edge ids through the triangle adjacency
        cell_of_poly = np.empty(primal.n_edges, dtype=int)
        for t in range(primal.n_triangles):
            for k in range(3):
                cell_of_poly[primal.tri_edges[t, k]] = dual.tri_cells[t, k]

    points = []
    offsets = []
    for poly in polys:
        offsets.append(len(points))
        points.extend(poly)
    points = np.asarray(points)

    u = fields.m / fields.rho[:, None]
    speed = np.linalg.norm(u[:, :2], axis=1)
    if params is not None and not params.incompressible:
        csound = np.sqrt(params.gamma * np.maximum(fields.p, 0.0)
                         / fields.rho)
        mach = np.where(csound > 0, speed / np.maximum(csound, 1e-300), 0.0)
    else:
        mach = np.zeros_like(speed)

    try:
        with open(path, "w") as f:
            f.write("# vtk DataFile Version 3.0\n")
            f.write("dual-grid solution\n")
            f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
            f.write(f"POINTS {len(points)} double\n")
            for x, y in points:
                f.write(f"{x:.10e} {y:.10e} 0.0\n")
            ncells = len(polys)
            size = sum(len(p) + 1 for p in polys)
            f.write(f"CELLS {ncells} {size}\n")
            for poly, off in zip(polys, offsets):
                ids = " ".join(str(off + k) for k in range(len(poly)))
                f.write(f"{len(poly)} {ids}\n")
            f.write(f"CELL_TYPES {ncells}\n")
            for poly in polys:
                f.write("7\n")          # VTK_POLYGON
            f.write(f"CELL_DATA {ncells}\n")

            def cell_scalar(name, vals):
                f.write(f"SCALARS {name} double\nLOOKUP_TABLE default\n")
                for e in range(ncells):
                    f.write(f"{vals[cell_of_poly[e]]:.10e}\n")

            cell_scalar("rho", fields.rho)
            cell_scalar("p", fields.p)
            cell_scalar("mach", mach)
            f.write("VECTORS velocity double\n")
            for e in range(ncells):
                ue = u[cell_of_poly[e]]
                f.write(f"{ue[0]:.10e} {ue[1]:.10e} {ue[2]:.10e}\n")
            A = fields.A.reshape(-1, 9)
            for idx, name in enumerate(("A11", "A12", "A13", "A21", "A22",
                                        "A23", "A31", "A32", "A33")):
                cell_scalar(name, A[:, idx])
            for idx, name in enumerate(("J1", "J2", "J3")):
                cell_scalar(name, fields.J[:, idx])
    except OSError as exc:
        raise OSError(f"failed to write VTK file {path}: {exc}") from exc


def sample_cut(dual, fields, start, end, n_samples=None):
    """Nearest-node samples along the segment start-end, deduplicated.

    Returns an (n, 18) array in the :data:`CUT_COLUMNS` order, with the
    coordinates of the sampled cells."""
    from scipy.spatial import cKDTree
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    if n_samples is None:
        n_samples = max(64, 2 * int(np.ceil(
            np.linalg.norm(end - start) / max(dual.r.min(), 1e-300))))
    ts = np.linspace(0.0, 1.0, n_samples)
    pts = start[None, :] + ts[:, None] * (end - start)[None, :]
    tree = cKDTree(dual.centers)
    _, idx = tree.query(pts)
    keep = np.ones(idx.size, dtype=bool)
    keep[1:] = idx[1:] != idx[:-1]
    cells = idx[keep]
    u = fields.m[cells] / fields.rho[cells, None]
    out = np.column_stack([
        dual.centers[cells], fields.rho[cells], u[:, 0], u[:, 1],
        fields.p[cells], fields.A[cells].reshape(-1, 9), fields.J[cells]])
    order = np.argsort(out[:, 0], kind="stable")
    return out[order]


def write_cut_csv(path, dual, fields, start, end, n_samples=None):
    data = sample_cut(dual, fields, start, end, n_samples)
    try:
        with open(path, "w") as f:
            f.write(",".join(CUT_COLUMNS) + "\n")
            for row in data:
                f.write(",".join(f"{v:.12e}" for v in row) + "\n")
    except OSError as exc:
        raise OSError(f"failed to write cut CSV {path}: {exc}") from exc
    return data


def write_error_csv(path, errors, extra=None):
    """Per-variable L2/Linf norms of one run: columns variable,l2,linf."""
    with open(path, "w") as f:
        f.write("variable,l2,linf\n")
        for var, (l2, linf) in errors.items():
            f.write(f"{var},{l2:.12e},{linf:.12e}\n")
        if extra:
            for key, val in extra.items():
                f.write(f"{key},{val},{val}\n")
